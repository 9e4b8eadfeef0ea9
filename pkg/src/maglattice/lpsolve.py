"""Relaxed pattern program: maximize |C| = |m . m0| / |m0|^2 over A~ m = 0, 0 <= m <= 1.

The equality rows are few (a handful of trap constraints) while the pixel
count is large, so the interior-point normal equations are only K x K.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .fieldcore import LatticeGeometry, MagnetizationPattern

logger = logging.getLogger(__name__)

RANK_RTOL = 1e-10


class InfeasibleError(RuntimeError):
    """Constraint targets cannot be met by any nonzero strength C."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class SolverError(RuntimeError):
    """Interior-point iteration failed to reach its tolerances."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or {}


def numerical_rank(M: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > rtol * max(s[0], np.finfo(float).tiny)))


@dataclass(frozen=True)
class LpInstance:
    A: np.ndarray
    b: np.ndarray
    m0: np.ndarray
    Atilde: np.ndarray
    residual: float = 0.0

    @property
    def rank(self) -> int:
        return numerical_rank(self.A)

    @property
    def objective(self) -> np.ndarray:
        return self.m0 / (self.m0 @ self.m0)


@dataclass
class LpSolution:
    m: np.ndarray
    C: float
    status: str
    unrailed: np.ndarray
    kkt_residuals: dict
    iterations: int = 0
    C_both: tuple = ()
    rank: int | None = None


def inhomogeneous_solution(A: np.ndarray, b: np.ndarray, rtol: float = RANK_RTOL):
    """Minimum-norm least-squares m0 = A^+ b via SVD, with its residual norm.

    Raises InfeasibleError when ``b`` has a component outside the range of
    ``A``: then ``A m = C b`` forces ``C = 0``.  The certificate ``y``
    satisfies ``y A = 0`` and ``y . b != 0``.
    """
    A = np.atleast_2d(np.asarray(A, float))
    b = np.asarray(b, float)
    if not np.any(b):
        raise ValueError("no inhomogeneous direction: all constraint targets are zero")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    r = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    Ur = U[:, :r]
    coef = Ur.T @ b
    m0 = Vt[:r].T @ (coef / s[:r])
    resid_vec = b - Ur @ coef
    residual = float(np.linalg.norm(resid_vec))
    if residual > 1e-8 * np.linalg.norm(b):
        raise InfeasibleError(
            f"constraint targets are inconsistent (residual {residual:.3g} outside the range of A)",
            certificate=resid_vec / residual,
        )
    return m0, residual


def reduce(A: np.ndarray, b: np.ndarray, m0: np.ndarray) -> np.ndarray:
    """A~ = A - b m0^T / |m0|^2, which annihilates m0."""
    nrm2 = float(m0 @ m0)
    if nrm2 == 0:
        raise ValueError("m0 must be nonzero")
    return np.asarray(A, float) - np.outer(b, m0) / nrm2


def build_instance(A, b) -> LpInstance:
    A = np.atleast_2d(np.asarray(A, float))
    b = np.asarray(b, float)
    m0, res = inhomogeneous_solution(A, b)
    return LpInstance(A, b, m0, reduce(A, b, m0), res)


def _row_basis(M: np.ndarray, scale: float | None = None, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis (r, N) of the row space of M.

    Singular values below ``rtol * scale`` count as zero; ``scale`` defaults
    to ``max(|M|, 1)`` so that a roundoff-level A~ is recognised as empty.
    """
    if M.size == 0 or not np.any(M):
        return np.zeros((0, M.shape[1]))
    _, s, Vt = np.linalg.svd(M, full_matrices=False)
    if scale is None:
        scale = max(s[0], 1.0)
    r = int(np.sum(s > rtol * scale))
    return Vt[:r]


def _max_step(x, dx):
    neg = dx < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


def _interior_point(Q, c, tol, max_iter):
    """Mehrotra predictor-corrector for min c.x, Qx = 0, x + s = 1, x, s >= 0."""
    K, N = Q.shape
    x = np.full(N, 0.5)
    s = np.full(N, 0.5)
    y = np.zeros(K)
    z = np.ones(N) + np.maximum(c, 0)
    w = np.ones(N) + np.maximum(-c, 0)
    cnorm = 1.0 + np.linalg.norm(c)
    res = {}
    for it in range(1, max_iter + 1):
        rb = -(Q @ x)
        ru = 1.0 - x - s
        rc = c - Q.T @ y - z + w
        mu = (x @ z + s @ w) / (2 * N)
        pobj, dobj = c @ x, -np.sum(w)
        res = {
            "primal": float(max(np.linalg.norm(rb), np.linalg.norm(ru) / np.sqrt(N))),
            "dual": float(np.linalg.norm(rc) / cnorm),
            "gap": float(abs(pobj - dobj) / (1 + abs(pobj))),
            "complementarity": float(mu),
        }
        if res["primal"] < tol and res["dual"] < tol and res["gap"] < tol:
            return x, y, z, w, it, res
        d = 1.0 / (z / x + w / s)
        M = (Q * d) @ Q.T

        def direction(rxz, rsw):
            rsw_eff = rsw - w * ru
            rhat = rc - rxz / x + rsw_eff / s
            dy = np.linalg.solve(M, rb + Q @ (d * rhat)) if K else np.zeros(0)
            dx = d * (Q.T @ dy - rhat)
            ds = ru - dx
            dz = (rxz - z * dx) / x
            dw = (rsw - w * ds) / s
            return dx, ds, dy, dz, dw

        dx, ds, dy, dz, dw = direction(-x * z, -s * w)
        ap = min(1.0, _max_step(x, dx), _max_step(s, ds))
        ad = min(1.0, _max_step(z, dz), _max_step(w, dw))
        mu_aff = ((x + ap * dx) @ (z + ad * dz) + (s + ap * ds) @ (w + ad * dw)) / (2 * N)
        sigma = min(1.0, (mu_aff / mu) ** 3)
        dx, ds, dy, dz, dw = direction(sigma * mu - x * z - dx * dz, sigma * mu - s * w - ds * dw)
        ap = min(1.0, 0.995 * _max_step(x, dx), 0.995 * _max_step(s, ds))
        ad = min(1.0, 0.995 * _max_step(z, dz), 0.995 * _max_step(w, dw))
        x = x + ap * dx
        s = s + ap * ds
        y = y + ad * dy
        z = z + ad * dz
        w = w + ad * dw
    raise SolverError(f"interior point did not converge in {max_iter} iterations", res)


def _purify(x, Q, c, tol):
    """Move an interior optimum to a vertex of the optimal face without losing objective."""
    x = x.copy()
    x[x <= tol] = 0.0
    x[x >= 1 - tol] = 1.0
    free = np.flatnonzero((x > 0) & (x < 1))
    if free.size and Q.shape[0]:
        # restore Qx = 0 using only the free variables
        corr, *_ = np.linalg.lstsq(Q[:, free], -(Q @ x), rcond=None)
        trial = x[free] + corr
        if np.all(trial >= -tol) and np.all(trial <= 1 + tol):
            x[free] = np.clip(trial, 0, 1)
    for _ in range(x.size + 1):
        free = np.flatnonzero((x > tol) & (x < 1 - tol))
        Qf = Q[:, free]
        if free.size == 0 or free.size <= numerical_rank(Qf, 1e-12):
            break
        if Q.shape[0]:
            _, sv, Vt = np.linalg.svd(Qf, full_matrices=True)
            direction = Vt[-1]
        else:
            direction = np.zeros(free.size)
            direction[0] = 1.0
        # never increase the (minimized) objective
        if c[free] @ direction > 0:
            direction = -direction
        xf = x[free]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_up = np.where(direction > 0, (1 - xf) / direction, np.inf)
            t_lo = np.where(direction < 0, -xf / direction, np.inf)
        t = float(min(t_up.min(), t_lo.min()))
        if not np.isfinite(t):
            break
        xf = xf + t * direction
        xf[np.abs(xf) <= tol] = 0.0
        xf[np.abs(xf - 1) <= tol] = 1.0
        x[free] = np.clip(xf, 0, 1)
        # guarantee progress: the blocking variable is pinned exactly
        k = int(np.argmin(np.minimum(t_up, t_lo)))
        x[free[k]] = 1.0 if direction[k] > 0 else 0.0
    return x


def solve_orientation(Atilde, m0, sign=+1, tol=1e-10, rail_tol=1e-6, max_iter=200, scale=None):
    """Maximize sign * m . m0 on the feasible box; returns (m, iterations, residuals)."""
    Q = _row_basis(np.atleast_2d(Atilde), scale)
    c = -sign * m0 / np.max(np.abs(m0))
    x, y, z, w, it, res = _interior_point(Q, c, tol, max_iter)
    xp = _purify(x, Q, c, rail_tol * 1e-3)
    feas = np.linalg.norm(Q @ xp) if Q.shape[0] else 0.0
    if c @ xp <= c @ x + 1e-9 * (1 + abs(c @ x)) and feas <= 1e-9 * (1 + np.sqrt(x.size)):
        x = xp
    res = dict(res, feasibility=float(np.linalg.norm(np.atleast_2d(Atilde) @ x)))
    return x, it, res


def unrailed_indices(m: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    return np.flatnonzero((m > tol) & (m < 1 - tol))


def solve(Atilde, m0, tol: float = 1e-10, rail_tol: float = 1e-6, A=None) -> LpSolution:
    """Solve both orientations and keep the larger |C| (ties favour C > 0)."""
    Atilde = np.atleast_2d(np.asarray(Atilde, float))
    m0 = np.asarray(m0, float)
    if Atilde.shape[1] != m0.size:
        raise ValueError("A~ and m0 dimensions disagree")
    nrm2 = float(m0 @ m0)
    if nrm2 == 0:
        raise ValueError("m0 must be nonzero")
    scale = np.linalg.norm(A, 2) if A is not None else None
    results = {}
    for sign in (+1, -1):
        x, it, res = solve_orientation(Atilde, m0, sign, tol, rail_tol, scale=scale)
        results[sign] = (x, float(x @ m0 / nrm2), it, res)
    Cp, Cm = results[+1][1], results[-1][1]
    best = +1 if abs(Cp) >= abs(Cm) - 1e-12 * max(1.0, abs(Cp)) else -1
    x, C, it, res = results[best]
    rank = numerical_rank(A) if A is not None else numerical_rank(Atilde) + 1
    return LpSolution(
        m=x,
        C=C,
        status="optimal",
        unrailed=unrailed_indices(x, rail_tol),
        kkt_residuals=res,
        iterations=it,
        C_both=(Cp, Cm),
        rank=rank,
    )


@dataclass
class RoundingReport:
    pattern: MagnetizationPattern
    snapped: int
    rounded: np.ndarray
    perturbation: float | None
    relative_perturbation: float | None
    tie_rule: str = "exact 0.5 rounds to 0"


def round_unrailed(solution: LpSolution, geometry: LatticeGeometry, tol: float = 1e-6, A=None, b=None) -> RoundingReport:
    """Snap near-railed pixels and round the few un-railed ones to the nearer bound."""
    m = np.asarray(solution.m, float)
    rounded_idx = unrailed_indices(m, tol)
    binary = np.where(m > 0.5, 1.0, 0.0)
    snapped = int(np.sum((m != binary) & ((m <= tol) | (m >= 1 - tol))))
    pert = rel = None
    if A is not None and b is not None:
        target = solution.C * np.asarray(b, float)
        pert = float(np.linalg.norm(np.asarray(A) @ binary - target))
        rel = pert / max(np.linalg.norm(target), np.finfo(float).tiny)
    pattern = MagnetizationPattern(geometry, binary.reshape(geometry.n2, geometry.n1))
    return RoundingReport(pattern, snapped, rounded_idx, pert, rel)


def vertex_enumeration(Atilde, m0):
    """Brute-force optimum of max |m . m0| / |m0|^2 over all basic feasible solutions.

    Only for tiny instances: enumerates every basis of the equality rows and
    every 0/1 assignment of the non-basic variables.
    """
    import itertools

    Atilde = np.atleast_2d(np.asarray(Atilde, float))
    m0 = np.asarray(m0, float)
    Q = _row_basis(Atilde)
    r, N = Q.shape
    c = m0 / (m0 @ m0)
    best_max, best_min = -np.inf, np.inf
    bits = np.array(list(itertools.product((0.0, 1.0), repeat=N - r)))
    for basis in itertools.combinations(range(N), r):
        B = list(basis)
        nonbasic = [k for k in range(N) if k not in basis]
        QB = Q[:, B]
        if r and abs(np.linalg.det(QB)) < 1e-12:
            continue
        xN = bits
        if r:
            xB = -np.linalg.solve(QB, Q[:, nonbasic] @ xN.T).T
            ok = np.all((xB >= -1e-9) & (xB <= 1 + 1e-9), axis=1)
        else:
            xB = np.zeros((len(xN), 0))
            ok = np.ones(len(xN), bool)
        if not np.any(ok):
            continue
        vals = xN[ok] @ c[nonbasic] + xB[ok] @ c[B]
        best_max = max(best_max, vals.max())
        best_min = min(best_min, vals.min())
    return best_max if abs(best_max) >= abs(best_min) - 1e-12 else best_min
