"""Zeeman pseudo-potential analysis of pattern fields.

All searches run in reduced units (lengths in d, fields in the reduced field
unit of ``PhysicalParams``).  A *source* is any object with
``expansion_arrays(points, order) -> (psi, u, v, w)`` and ``field(points)``;
the total field seen by the atoms is ``b = -u + B0``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .fieldcore import GAUSS, PhysicalParams, ValidationError

logger = logging.getLogger(__name__)

MU_B = 9.2740100783e-24  # J/T
K_B = 1.380649e-23  # J/K
RB87_MASS = 1.44316060e-25  # kg


class NotATrapError(RuntimeError):
    """Minimization ended somewhere that is not a stable field minimum."""


class ConvergenceError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SaddleError(RuntimeError):
    pass


@dataclass(frozen=True)
class AtomSpec:
    F: int = 2
    m_F: int = 2
    g_F: float = 0.49983643
    mass: float = RB87_MASS
    mu_B: float = MU_B
    omega_recoil: float = 2 * np.pi * 3.771e3
    name: str = "rb87"

    def __post_init__(self):
        if not self.m_F * self.g_F > 0:
            raise ValidationError("state is not weak-field seeking (m_F g_F <= 0)")
        if abs(self.m_F) > self.F:
            raise ValidationError("|m_F| exceeds F")
        if self.mass <= 0:
            raise ValidationError("mass must be positive")

    @property
    def moment(self) -> float:
        """m_F g_F mu_B in J/T."""
        return self.m_F * self.g_F * self.mu_B


RB87 = AtomSpec()

ATOMS = {"rb87": RB87}


@dataclass(frozen=True)
class BiasConfig:
    """Uniform bias B0 and signed Ioffe field along ``axis`` (reduced units)."""

    B0: np.ndarray
    B_I: float
    axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))

    def __post_init__(self):
        B0 = np.asarray(self.B0, float).reshape(3)
        ax = np.asarray(self.axis, float).reshape(3)
        n = np.linalg.norm(ax)
        if n == 0:
            raise ValidationError("Ioffe axis must be nonzero")
        object.__setattr__(self, "B0", B0)
        object.__setattr__(self, "axis", ax / n)
        object.__setattr__(self, "B_I", float(self.B_I))

    def gauss(self, params: PhysicalParams):
        s = params.field_unit / GAUSS
        return self.B0 * s, self.B_I * s

    @classmethod
    def from_gauss(cls, B0_G, B_I_G, axis, params: PhysicalParams) -> "BiasConfig":
        s = GAUSS / params.field_unit
        return cls(np.asarray(B0_G, float) * s, B_I_G * s, axis)

    @property
    def depth(self) -> float:
        """||B0|| - |B_I|: the pattern field vanishes far from the film."""
        return float(np.linalg.norm(self.B0) - abs(self.B_I))


@dataclass
class TrapReport:
    position: np.ndarray  # m
    bias: BiasConfig
    min_field_G: float
    depth_G: float
    depth_mK: float
    curvature: np.ndarray  # T/m^2
    eigenvalues: np.ndarray  # T/m^2, descending
    eigenvectors: np.ndarray  # columns
    frequencies: np.ndarray  # rad/s, descending
    lamb_dicke: np.ndarray
    barriers_G: dict = field(default_factory=dict)
    barriers_mK: dict = field(default_factory=dict)
    saddles: dict = field(default_factory=dict)
    zero_flags: list = field(default_factory=list)
    position_reduced: np.ndarray | None = None
    hessian_agreement: float = float("nan")
    bias_G: tuple | None = None

    @property
    def frequencies_khz(self) -> np.ndarray:
        return self.frequencies / (2 * np.pi) / 1e3


# ---------------------------------------------------------------------------
# sources


class CombinedSource:
    """Superposition of field sources."""

    def __init__(self, *parts):
        self.parts = [p for p in parts if p is not None]

    def expansion_arrays(self, points, order: int = 2):
        total = None
        for part in self.parts:
            arrs = part.expansion_arrays(points, order)
            total = list(arrs) if total is None else [a if b is None else a + b for a, b in zip(total, arrs)]
        return tuple(total)

    def field(self, points):
        return sum(p.field(points) for p in self.parts)

    def field_plane(self, z, ngrid, geometry):
        total = None
        for part in self.parts:
            xy, B = plane_field(part, geometry, z, ngrid)
            total = B if total is None else total + B
        return xy, total


class NullSource:
    """No pattern at all (zero field)."""

    def expansion_arrays(self, points, order: int = 2):
        m = np.atleast_2d(points).shape[0]
        out = [np.zeros(m), np.zeros((m, 3)), np.zeros((m, 3, 3)), np.zeros((m, 3, 3, 3))]
        return tuple(out[: order + 1]) + (None,) * (3 - order)

    def field(self, points):
        return np.zeros((np.atleast_2d(points).shape[0], 3))


def plane_field(source, geometry, z: float, ngrid: int):
    """Field on the fractional ``ngrid^2`` grid of one cell at height z."""
    if isinstance(source, CombinedSource):
        return source.field_plane(z, ngrid, geometry)
    if hasattr(source, "field_plane") and getattr(source, "geometry", None) == geometry:
        return source.field_plane(z, ngrid)
    s = np.arange(ngrid) / ngrid
    S, T = np.meshgrid(s, s, indexing="ij")
    xy = geometry.to_cartesian(np.stack([S, T], axis=-1))
    pts = np.concatenate([xy.reshape(-1, 2), np.full((ngrid * ngrid, 1), z)], axis=1)
    return xy, source.field(pts).reshape(ngrid, ngrid, 3)


# ---------------------------------------------------------------------------
# |B| and its derivatives


def total_field(source, B0, points) -> np.ndarray:
    return source.field(points) + np.asarray(B0, float)


def field_magnitude(source, B0, points) -> np.ndarray:
    return np.linalg.norm(total_field(source, B0, np.atleast_2d(points)), axis=-1)


def norm_derivatives(source, B0, r, order: int = 2):
    """|b|, grad |b| and (order 2) its Hessian at one point, reduced units."""
    r = np.asarray(r, float)
    _, u, v, w = source.expansion_arrays(r[None], 3 if order >= 2 else 2)
    b = -u[0] + B0
    nb = np.linalg.norm(b)
    if nb == 0:
        return 0.0, np.zeros(3), None
    v = v[0]
    g = -v @ b / nb
    if order < 2:
        return nb, g, None
    wb = np.einsum("ijk,k->ij", w[0], b)
    H = (v @ v - wb) / nb - np.outer(g, g) / nb
    return nb, g, 0.5 * (H + H.T)


def ip_curvature(v, w, b) -> np.ndarray:
    """Hessian of |b| at a point where v.b = 0 (an exact IP minimum)."""
    nb = np.linalg.norm(b)
    H = (v @ v - np.einsum("ijk,k->ij", w, b)) / nb
    return 0.5 * (H + H.T)


def zeeman_potential(source, bias: BiasConfig, atom: AtomSpec, r, params: PhysicalParams) -> np.ndarray:
    """V = m_F g_F mu_B ||B_pattern + B0|| in joules; r in reduced units."""
    r = np.atleast_2d(np.asarray(r, float))
    out = atom.moment * field_magnitude(source, bias.B0, r) * params.field_unit
    return out if out.size > 1 else float(out[0])


# ---------------------------------------------------------------------------
# bias solve


def _null_axis(v, hint):
    lam, vecs = np.linalg.eigh(v)
    i = int(np.argmin(np.abs(lam)))
    nu = vecs[:, i]
    if hint is not None and nu @ hint < 0:
        nu = -nu
    return lam, nu


def solve_bias(source, site_xy, h: float, B_I: float, axis_hint=None, tol: float = 1e-12,
               max_radius: float = 0.25) -> tuple[BiasConfig, np.ndarray]:
    """Bias that places an IP minimum with Ioffe field B_I at height h near site_xy.

    The point (x*, y*, h) is moved until the gradient tensor has a null
    eigenvector nu and the bias B0 = -B_pattern + B_I nu is in plane.
    Returns the bias and the trap point.
    """
    if h <= 0:
        raise ValidationError("target height must be positive")
    hint = None if axis_hint is None else np.asarray(axis_hint, float)
    site_xy = np.asarray(site_xy, float)

    def local(xy):
        _, u, v, _ = source.expansion_arrays(np.array([[xy[0], xy[1], h]]), 2)
        return u[0], v[0]

    _, v0 = local(site_xy)
    scale = max(np.abs(v0).max(), 1e-300)

    def resid(xy):
        u, v = local(xy)
        lam, nu = _null_axis(v, hint)
        # signed smallest eigenvalue keeps the residual smooth through zero
        small = lam[np.argmin(np.abs(lam))]
        B0z = u[2] + B_I * nu[2]
        return np.array([small / scale, B0z / scale])

    sol = optimize.root(resid, site_xy, method="hybr", options={"xtol": 1e-14})
    xy = sol.x
    res = resid(xy)
    diag = {"residual": res.tolist(), "site": site_xy.tolist(), "h": h, "message": sol.message}
    if not np.all(np.isfinite(res)) or np.max(np.abs(res)) > 1e-9 or np.linalg.norm(xy - site_xy) > max_radius:
        raise ConvergenceError("no IP-compatible point found near the site", diag)
    u, v = local(xy)
    _, nu = _null_axis(v, hint)
    B0 = u + B_I * nu
    B0[2] = 0.0 if abs(B0[2]) < 1e-12 * max(1.0, np.abs(B0).max()) else B0[2]
    bias = BiasConfig(B0, B_I, nu)
    # consistency: total field at the point equals B_I nu
    check = -u + bias.B0 - B_I * nu
    if np.max(np.abs(check)) > 1e-8:
        raise ConvergenceError("bias consistency check failed", {"mismatch": check.tolist()})
    return bias, np.array([xy[0], xy[1], h])


# ---------------------------------------------------------------------------
# minima and saddles


def _modified_inverse_step(g, H, floor_rel=1e-8):
    lam, vecs = np.linalg.eigh(H)
    scale = max(np.abs(lam).max(), 1e-300)
    lam_mod = np.maximum(np.abs(lam), floor_rel * scale)
    return -vecs @ ((vecs.T @ g) / lam_mod), lam


def find_trap(source, bias: BiasConfig, seed, tol: float = 1e-10, max_iter: int = 200,
              max_step: float = 0.1, zmax: float = 20.0) -> np.ndarray:
    """Newton minimization of |b| (eigenvalue-modified, backtracking)."""
    x = np.asarray(seed, float).copy()
    if x[2] <= 0:
        raise ValidationError("seed must lie above the film")
    B0 = bias.B0
    for it in range(max_iter):
        nb, g, H = norm_derivatives(source, B0, x)
        if H is None:
            raise NotATrapError(f"field vanishes at {x}")
        gn = np.linalg.norm(g)
        if gn <= tol:
            break
        p, lam = _modified_inverse_step(g, H)
        pn = np.linalg.norm(p)
        if pn > max_step:
            p *= max_step / pn
        if lam.min() > 0 and pn < 1e-6:
            x = x + p
            continue
        alpha, slope = 1.0, g @ p
        while alpha > 1e-10:
            xn = x + alpha * p
            if xn[2] > 0 and field_magnitude(source, B0, xn)[0] <= nb + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
        else:
            raise NotATrapError(f"line search stalled at {x} (|grad| = {gn:.3e})")
        x = xn
        if x[2] > zmax:
            raise NotATrapError("minimizer escaped away from the film")
    else:
        raise NotATrapError(f"no convergence after {max_iter} iterations (|grad| = {gn:.3e})")
    lam = np.linalg.eigvalsh(H)
    if lam.min() <= 0:
        raise NotATrapError(f"critical point at {x} is not a minimum (eigenvalues {lam})")
    return x


def _eigenvector_following(source, B0, x, tol, max_iter, radius, free):
    """Climb the softest mode, descend the rest, over coordinates ``free``."""
    gprev = np.inf
    H = None
    for _ in range(max_iter):
        nb, g, H = norm_derivatives(source, B0, x)
        g, Hf = g[free], H[np.ix_(free, free)]
        gn = np.linalg.norm(g)
        if gn <= tol:
            return x, Hf, True
        lam, vecs = np.linalg.eigh(Hf)
        gt = vecs.T @ g
        scale = max(np.abs(lam).max(), 1e-300)
        lam_mod = np.maximum(np.abs(lam), 1e-8 * scale)
        lam_mod[0] = -lam_mod[0]
        p = -vecs @ (gt / lam_mod)
        pn = np.linalg.norm(p)
        if pn > radius:
            p *= radius / pn
        radius = radius * 0.5 if gn > gprev else min(radius * 1.5, 0.1)
        gprev = gn
        x = x.copy()
        x[free] += p
        if x[2] <= 0:
            return x, Hf, False
    return x, H[np.ix_(free, free)], False


def _minimax_path(source, B0, a, b, free, zfloor=1e-3):
    """Max over the straight path a-b of the min of |b| across it."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    e = (b - a)[free] / np.linalg.norm((b - a)[free])
    basis_f = np.linalg.svd(e[None])[2][1:]
    basis = np.zeros((len(basis_f), 3))
    basis[:, free] = basis_f
    cache = {"y": np.zeros(len(basis))}

    def inner(t):
        base = a + t * (b - a)

        def f(y):
            pt = base + y @ basis
            if pt[2] <= zfloor:
                return 1e6 + (zfloor - pt[2]), -basis[:, 2] * 1e3
            nb, g, _ = norm_derivatives(source, B0, pt, order=1)
            return nb, basis @ g

        res = optimize.minimize(f, cache["y"], jac=True, method="BFGS", options={"gtol": 1e-11})
        cache["y"] = res.x
        return res.fun, base + res.x @ basis

    ts = np.linspace(0.05, 0.95, 19)
    vals = [inner(t)[0] for t in ts]
    i = int(np.argmax(vals))
    lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, len(ts) - 1)]
    cache["y"] = np.zeros(len(basis))
    res = optimize.minimize_scalar(lambda t: -inner(t)[0], bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-9})
    return inner(res.x)[1]


def find_saddle(source, bias: BiasConfig, trap_a, trap_b, mode: str = "plane", tol: float = 1e-10,
                max_iter: int = 200):
    """Index-1 saddle of |b| between two minima, seeded at their midpoint.

    ``mode="plane"`` searches within the horizontal plane through the
    midpoint (the separatrix of the in-plane potential map); ``mode="3d"``
    lets all three coordinates move.
    """
    if mode not in ("plane", "3d"):
        raise ValidationError("saddle mode must be 'plane' or '3d'")
    free = np.array([0, 1]) if mode == "plane" else np.array([0, 1, 2])
    a, b = np.asarray(trap_a, float), np.asarray(trap_b, float)
    B0 = bias.B0

    def accept(x, H, ok):
        if not ok:
            return False
        lam = np.linalg.eigvalsh(H)
        if np.sum(lam < 0) != 1:
            return False
        t = (x - a) @ (b - a) / ((b - a) @ (b - a))
        return 0.0 < t < 1.0

    x, H, ok = _eigenvector_following(source, B0, 0.5 * (a + b), tol, max_iter, 0.02, free)
    if accept(x, H, ok):
        return x
    logger.info("eigenvector following failed from midpoint; trying path minimax")
    seed = _minimax_path(source, B0, a, b, free)
    x, H, ok = _eigenvector_following(source, B0, seed, tol, max_iter, 0.01, free)
    if accept(x, H, ok):
        return x
    raise SaddleError(f"no index-1 saddle found between {a} and {b}")


def barrier_heights(source, bias: BiasConfig, trap_a, trap_b, mode: str = "plane"):
    """(barrier in reduced field units, saddle point) for the pair of minima."""
    s = find_saddle(source, bias, trap_a, trap_b, mode)
    va = field_magnitude(source, bias.B0, trap_a)[0]
    vb = field_magnitude(source, bias.B0, trap_b)[0]
    vs = field_magnitude(source, bias.B0, s)[0]
    if vs < max(va, vb) - 1e-12:
        raise SaddleError("saddle lies below one of the minima")
    return vs - min(va, vb), s


def lattice_barriers(source, bias: BiasConfig, trap, directions, mode: str = "plane"):
    """Barriers from ``trap`` to its periodic images trap + d for each in-plane d."""
    out, saddles = {}, {}
    for name, dvec in directions.items():
        other = np.asarray(trap, float) + np.array([dvec[0], dvec[1], 0.0])
        out[name], saddles[name] = barrier_heights(source, bias, trap, other, mode)
    return out, saddles


# ---------------------------------------------------------------------------
# reports


def fd_hessian(source, B0, r, step: float = 1e-3) -> np.ndarray:
    """Richardson central differences of the analytic gradient of |b|."""
    r = np.asarray(r, float)

    def diff(hs):
        H = np.empty((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = hs
            gp = norm_derivatives(source, B0, r + e, order=1)[1]
            gm = norm_derivatives(source, B0, r - e, order=1)[1]
            H[:, j] = (gp - gm) / (2 * hs)
        return H

    H = (4 * diff(step / 2) - diff(step)) / 3
    return 0.5 * (H + H.T)


def characterize_trap(source, bias: BiasConfig, atom: AtomSpec, position, params: PhysicalParams,
                      check_tol: float = 1e-6) -> TrapReport:
    position = np.asarray(position, float)
    nb, g, H = norm_derivatives(source, bias.B0, position)
    _, u, v, w = source.expansion_arrays(position[None], 3)
    b = -u[0] + bias.B0
    H_ip = ip_curvature(v[0], w[0], b)
    H_fd = fd_hessian(source, bias.B0, position)
    scale = np.abs(H).max()
    agreement = max(np.abs(H_ip - H).max(), np.abs(H_fd - H).max()) / scale
    if agreement > check_tol:
        logger.warning("curvature cross-check disagreement %.2e", agreement)
    lam, vecs = np.linalg.eigh(H)
    if lam.min() <= 0:
        raise NotATrapError(f"non-positive curvature eigenvalue {lam.min():.3e}")
    order = np.argsort(lam)[::-1]
    lam, vecs = lam[order], vecs[:, order]
    curv_unit = params.field_unit / params.d**2
    lam_si = lam * curv_unit
    omega = np.sqrt(atom.moment * lam_si / atom.mass)
    depth_G = bias.depth * params.field_unit / GAUSS
    return TrapReport(
        position=position * params.d,
        bias=bias,
        min_field_G=nb * params.field_unit / GAUSS,
        depth_G=depth_G,
        depth_mK=gauss_to_mk(depth_G, atom),
        curvature=H * curv_unit,
        eigenvalues=lam_si,
        eigenvectors=vecs,
        frequencies=omega,
        lamb_dicke=np.sqrt(atom.omega_recoil / omega),
        position_reduced=position,
        hessian_agreement=float(agreement),
        bias_G=tuple(np.r_[bias.gauss(params)[0], bias.gauss(params)[1]]),
    )


def gauss_to_mk(value_G, atom: AtomSpec = RB87):
    return np.asarray(value_G) * GAUSS * atom.moment / K_B * 1e3


def lattice_directions(geometry) -> dict:
    """Inequivalent nearest-neighbour directions of the lattice."""
    a1, a2 = geometry.a1, geometry.a2
    dirs = {"a1": a1, "a2": a2}
    if abs(np.linalg.norm(a2 - a1) - 1.0) < 1e-9:
        dirs["a2-a1"] = a2 - a1
    return dirs


def analyze_site(source, site_xy, h: float, B_I: float, axis, atom: AtomSpec, params: PhysicalParams,
                 directions=None, bias: BiasConfig | None = None) -> TrapReport:
    """Bias solve (unless given), trap search, curvature and barriers for one site."""
    if bias is None:
        bias, seed = solve_bias(source, site_xy, h, B_I, axis)
    else:
        seed = np.array([site_xy[0], site_xy[1], h])
    pos = find_trap(source, bias, seed)
    rep = characterize_trap(source, bias, atom, pos, params)
    if directions:
        red, saddles = lattice_barriers(source, bias, pos, directions)
        unit = params.field_unit / GAUSS
        rep.barriers_G = {k: val * unit for k, val in red.items()}
        rep.barriers_mK = {k: float(gauss_to_mk(val, atom)) for k, val in rep.barriers_G.items()}
        rep.saddles = saddles
    return rep


def _barrier_difference(source, site_xy, h, B_I, axis, pair):
    bias, seed = solve_bias(source, site_xy, h, B_I, axis)
    pos = find_trap(source, bias, seed)
    bars, saddles = lattice_barriers(source, bias, pos, pair)
    vals = list(bars.values())
    return vals[0] - vals[1], vals, list(saddles.values())


def _shared_saddle(pair, saddles, tol=1e-6) -> bool:
    """True when both paths cross the same saddle modulo the lattice."""
    L = np.column_stack([np.asarray(v, float)[:2] for v in pair.values()])
    fa, fb = (np.linalg.solve(L, np.asarray(s, float)[:2]) for s in saddles)
    df = fa - fb
    return bool(np.all(np.abs(df - np.round(df)) < tol) and abs(saddles[0][2] - saddles[1][2]) < tol)


def symmetric_ioffe_search(source, site_xy, h: float, axis, directions, bracket=(0.005, 0.5),
                           sign: float | None = None, n_scan: int = 16, xtol: float = 1e-12):
    """B_I (reduced) at which the barriers along two lattice directions agree.

    Scans |B_I| geometrically over ``bracket`` for each sign (or the given
    one), then refines the first sign change with Brent's method.
    """
    if len(directions) != 2:
        raise ValidationError("need exactly two lattice directions")
    pair = dict(directions)
    signs = [sign] if sign is not None else [1.0, -1.0]
    scanned = []
    for s in signs:
        grid = s * np.geomspace(bracket[0], bracket[1], n_scan)
        prev = None
        for bi in grid:
            try:
                f, _, saddles = _barrier_difference(source, site_xy, h, bi, axis, pair)
            except (NotATrapError, SaddleError, ConvergenceError) as exc:
                logger.debug("B_I=%g skipped: %s", bi, exc)
                prev = None
                continue
            if _shared_saddle(pair, saddles):
                # both barriers are set by one saddle: equal for a trivial reason
                logger.debug("B_I=%g skipped: shared saddle", bi)
                prev = None
                continue
            scanned.append((float(bi), float(f)))
            if f == 0:
                return float(bi)
            if prev is not None and np.sign(f) != np.sign(prev[1]):
                root = optimize.brentq(
                    lambda x: _barrier_difference(source, site_xy, h, x, axis, pair)[0],
                    prev[0], bi, xtol=xtol, rtol=1e-13,
                )
                return float(root)
            prev = (bi, f)
    raise ConvergenceError("no sign change of the barrier difference in the scanned interval",
                           {"scanned": scanned})


# ---------------------------------------------------------------------------
# spurious zeros


@dataclass
class ZeroScan:
    points: list
    values: list
    resolution: tuple
    degenerate: bool = False
    candidates: int = 0


def _magnitude_grid(source, B0, geometry, zs, ngrid):
    """|b| on an (s, t, z) grid over one cell."""
    mags, xy = [], None
    for z in zs:
        xy, B = plane_field(source, geometry, z, ngrid)
        mags.append(np.linalg.norm(B + B0, axis=-1))
    return xy, np.stack(mags, axis=-1)


def _grid_minima(M):
    """Local minima of M (periodic in s, t; edge-padded in z) and the rise to the neighbours."""
    nz = M.shape[2]
    pad = np.pad(M, ((0, 0), (0, 0), (1, 1)), mode="edge")
    is_min = np.ones_like(M, bool)
    rise = np.zeros_like(M)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            for dk in (-1, 0, 1):
                if di == dj == dk == 0:
                    continue
                nb = np.roll(np.roll(pad, di, 0), dj, 1)[:, :, 1 + dk: 1 + dk + nz]
                is_min &= M <= nb
                rise = np.maximum(rise, nb - M)
    return is_min, rise


def _refine_squared(source, B0, x0, zmin, zmax):
    def f(x):
        if x[2] <= 0:
            return 1e3, np.zeros(3)
        b = total_field(source, B0, x[None])[0]
        _, u, v, _ = source.expansion_arrays(x[None], 2)
        return b @ b, -2 * v[0] @ b

    return optimize.minimize(f, x0, jac=True, method="L-BFGS-B",
                             bounds=[(None, None), (None, None), (zmin, zmax)],
                             options={"ftol": 1e-30, "gtol": 1e-16})


def detect_zeros(source, B0, geometry, zmin: float, zmax: float, threshold: float,
                 ngrid: int = 64, nz: int = 64) -> ZeroScan:
    """Points in one cell column (zmin <= z <= zmax) where ||b|| < threshold.

    A grid scan (log-spaced in z) flags local minima that could hide a zero
    given the local slope; each is refined by L-BFGS on |b|^2.
    """
    B0 = np.asarray(B0, float)
    zs = np.geomspace(zmin, zmax, nz)
    xy, M = _magnitude_grid(source, B0, geometry, zs, ngrid)
    res = (ngrid, ngrid, nz)
    if np.all(M < threshold):
        pts = [np.r_[xy[i, j], zs[k]] for i in range(ngrid) for j in range(ngrid) for k in range(nz)]
        return ZeroScan(pts, M.ravel().tolist(), res, degenerate=True)
    is_min, rise = _grid_minima(M)
    # a zero inside the neighbourhood needs |b| to fall by at least M there,
    # which a resolved field cannot do if M exceeds the rise to the neighbours
    cand = np.argwhere(is_min & (M - threshold <= rise))
    found, vals = [], []
    for i, j, k in cand:
        x0 = np.r_[xy[i, j], zs[k]]
        r = _refine_squared(source, B0, x0, zmin, zmax)
        val = float(np.sqrt(max(r.fun, 0.0)))
        if val < threshold and not any(np.linalg.norm(r.x - p) < 1e-6 for p in found):
            found.append(r.x)
            vals.append(val)
    return ZeroScan(found, vals, res, candidates=len(cand))


def local_minima(source, B0, geometry, zmin: float, zmax: float, ngrid: int = 32, nz: int = 24):
    """Interior local minima of |b| in one cell column, as (fractional-cell key, position, |b|).

    Positions are wrapped into the cell; minima on the z bounds are dropped.
    """
    B0 = np.asarray(B0, float)
    zs = np.geomspace(zmin, zmax, nz)
    xy, M = _magnitude_grid(source, B0, geometry, zs, ngrid)
    is_min, _ = _grid_minima(M)
    out = []
    for i, j, k in np.argwhere(is_min):
        r = _refine_squared(source, B0, np.r_[xy[i, j], zs[k]], zmin, zmax)
        x = r.x
        if x[2] <= zmin * (1 + 1e-6) or x[2] >= zmax * (1 - 1e-6):
            continue
        frac = np.mod(geometry.to_fractional(x[:2]) + 1e-9, 1.0) - 1e-9
        key = np.r_[frac, x[2]]
        if any(_same_site(key, o[0]) for o in out):
            continue
        out.append((key, x, float(np.sqrt(max(r.fun, 0.0)))))
    return out


def _same_site(a, b, tol=1e-5):
    ds = np.abs(a[:2] - b[:2])
    ds = np.minimum(ds, 1 - ds)
    return bool(np.all(ds < tol) and abs(a[2] - b[2]) < tol)


# ---------------------------------------------------------------------------
# Fourier truncation


def potential_map(source, B0, geometry, z: float, ngrid: int) -> np.ndarray:
    _, B = plane_field(source, geometry, z, ngrid)
    return np.linalg.norm(B + np.asarray(B0, float), axis=-1)


def exchange_asymmetry(source, B0, geometry, z: float, ngrid: int = 128) -> float:
    """max |V(s,t) - V(t,s)| over the cell map, relative to the map's range."""
    V = potential_map(source, B0, geometry, z, ngrid)
    return float(np.abs(V - V.T).max() / (V.max() - V.min()))


@dataclass
class TruncationReport:
    cutoff: float
    n_modes: int
    depth: float
    barriers: dict
    frequencies: np.ndarray
    potential: float
    reference: TrapReport
    truncated: TrapReport


def fourier_truncation_report(pattern, cutoff: float, reference: TrapReport, site_xy, h: float,
                              atom: AtomSpec, params: PhysicalParams, directions, ngrid: int = 128):
    """Relative deviations of trap figures when modes with |k| > cutoff*2pi/d are dropped.

    B_I and the trap height are held at the reference values and the bias is
    re-solved for the truncated field.  ``potential`` is the max map
    deviation in the plane z = h divided by the reference map range.
    """
    from .fieldcore import PeriodicField, spectrum_of

    field_t = PeriodicField(spectrum_of(pattern, cutoff), zmin=min(h, 0.25))
    rep = analyze_site(field_t, site_xy, h, reference.bias.B_I, reference.bias.axis, atom, params,
                       directions)
    ref_field = PeriodicField(spectrum_of(pattern), zmin=min(h, 0.25))
    Vr = potential_map(ref_field, reference.bias.B0, pattern.geometry, h, ngrid)
    Vt = potential_map(field_t, rep.bias.B0, pattern.geometry, h, ngrid)
    rel = lambda a, b: (a - b) / b
    return TruncationReport(
        cutoff=cutoff,
        n_modes=int(np.count_nonzero(np.abs(field_t.coef) > 0)),
        depth=rel(rep.depth_G, reference.depth_G),
        barriers={k: rel(rep.barriers_G[k], reference.barriers_G[k]) for k in reference.barriers_G},
        frequencies=rel(rep.frequencies, reference.frequencies),
        potential=float(np.abs(Vt - Vr).max() / (Vr.max() - Vr.min())),
        reference=reference,
        truncated=rep,
    )
