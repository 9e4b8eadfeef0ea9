"""Scalar magnetic potential of binary out-of-plane magnetization patterns.

Everything inside this module works in reduced units: lengths in the lattice
period ``d``, the scalar potential in ``mu0*delta*Mz/2``, fields in
``(mu0*delta*Mz/2)/d`` and so on.  ``PhysicalParams`` converts at the edges.

Two evaluation routes are provided and kept independent of each other:

* finite polygons, via closed-form solid angles (``polygon_potential``);
* periodic pixel patterns, via exact pixel form factors and exponential
  damping of every Fourier mode (``FourierSpectrum`` / ``PeriodicField``).
"""
from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MU0 = 4e-7 * np.pi  # classical value; SI 2019 differs by ~1e-10 relative
GAUSS = 1e-4  # tesla per gauss

# decay factor below which a damped Fourier mode is dropped
DEFAULT_MODE_TOL = 1e-16

AXES = {"x": 0, "y": 1, "z": 2}


class DomainError(ValueError):
    """Evaluation point outside the half-space above the film."""


class ValidationError(ValueError):
    """Malformed input (pattern, polygon, selector, ...)."""


@dataclass(frozen=True)
class PhysicalParams:
    """Film and lattice scale.

    ``magnetization_current`` is ``Mz * delta`` in amperes.  The field unit
    used in reduced quantities is ``mu0 * Mz * delta / (2 d)``.
    """

    Mz: float = 670e3
    delta: float = 0.3e-6
    d: float = 5e-6
    mu0: float = MU0

    def __post_init__(self):
        for name in ("Mz", "delta", "d", "mu0"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be strictly positive")

    @classmethod
    def from_current(cls, current: float, d: float, delta: float = 0.3e-6, mu0: float = MU0):
        return cls(Mz=current / delta, delta=delta, d=d, mu0=mu0)

    @property
    def magnetization_current(self) -> float:
        return self.Mz * self.delta

    @property
    def potential_unit(self) -> float:
        """Tesla metre per reduced potential unit."""
        return 0.5 * self.mu0 * self.magnetization_current

    @property
    def field_unit(self) -> float:
        """Tesla per reduced field unit."""
        return self.potential_unit / self.d

    @property
    def gradient_unit(self) -> float:
        return self.potential_unit / self.d**2

    @property
    def curvature_unit(self) -> float:
        return self.potential_unit / self.d**3


@dataclass(frozen=True)
class LatticeGeometry:
    """Bravais cell spanned by a1 = (1, 0) and a2 = (cos zeta, sin zeta), in units of d.

    The cell is divided into ``n1 x n2`` parallelogram pixels.
    """

    zeta: float
    n1: int
    n2: int

    def __post_init__(self):
        if not 0 < self.zeta < np.pi:
            raise ValidationError("lattice angle must lie in (0, pi)")
        if self.n1 < 1 or self.n2 < 1:
            raise ValidationError("pixel grid must be at least 1x1")

    @property
    def a1(self) -> np.ndarray:
        return np.array([1.0, 0.0])

    @property
    def a2(self) -> np.ndarray:
        return np.array([np.cos(self.zeta), np.sin(self.zeta)])

    @property
    def lattice_matrix(self) -> np.ndarray:
        """Columns are a1 and a2."""
        return np.column_stack([self.a1, self.a2])

    @property
    def reciprocal_matrix(self) -> np.ndarray:
        """Columns are b1 and b2 with a_i . b_j = 2 pi delta_ij."""
        return 2 * np.pi * np.linalg.inv(self.lattice_matrix).T

    @property
    def b1(self) -> np.ndarray:
        return self.reciprocal_matrix[:, 0]

    @property
    def b2(self) -> np.ndarray:
        return self.reciprocal_matrix[:, 1]

    @property
    def area(self) -> float:
        return abs(float(np.cross(self.a1, self.a2)))

    @property
    def n_pixels(self) -> int:
        return self.n1 * self.n2

    def with_grid(self, n1: int, n2: int) -> "LatticeGeometry":
        return dataclasses.replace(self, n1=n1, n2=n2)

    def to_fractional(self, xy: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.lattice_matrix, np.asarray(xy, float).T).T

    def to_cartesian(self, st: np.ndarray) -> np.ndarray:
        return np.asarray(st, float) @ self.lattice_matrix.T

    def pixel_polygon(self, i: int, j: int) -> np.ndarray:
        """Corners (4, 2) of pixel (i, j), counter-clockwise."""
        st = np.array([[i, j], [i + 1, j], [i + 1, j + 1], [i, j + 1]], float)
        st /= [self.n1, self.n2]
        return self.to_cartesian(st)


@dataclass(frozen=True)
class MagnetizationPattern:
    """Pixel magnetizations over one unit cell, array shape ``(n2, n1)``.

    Row ``j`` runs along a1; ``values[j, i]`` is the pixel whose lower corner
    sits at ``i/n1 a1 + j/n2 a2``.  Flattening is row-major, so pixel
    index ``alpha = j*n1 + i``.
    """

    geometry: LatticeGeometry
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(self.geometry.n2, self.geometry.n1)
        if v.shape != (self.geometry.n2, self.geometry.n1):
            raise ValidationError(
                f"pattern shape {v.shape} does not match grid ({self.geometry.n2}, {self.geometry.n1})"
            )
        if not np.all(np.isfinite(v)) or v.min() < 0 or v.max() > 1:
            raise ValidationError("pixel magnetizations must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def binary(self) -> bool:
        return bool(np.all((self.values == 0) | (self.values == 1)))

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @classmethod
    def uniform(cls, geometry: LatticeGeometry, value: float = 1.0) -> "MagnetizationPattern":
        return cls(geometry, np.full((geometry.n2, geometry.n1), float(value)))


@dataclass(frozen=True)
class FiniteDomain:
    polygon: np.ndarray
    magnetization: float = 1.0

    def __post_init__(self):
        poly = np.asarray(self.polygon, float)
        if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
            raise ValidationError("polygon needs at least 3 two-dimensional vertices")
        if not 0 <= self.magnetization <= 1:
            raise ValidationError("magnetization must lie in [0, 1]")
        if abs(_signed_area(poly)) < 1e-300:
            raise ValidationError("degenerate polygon (zero area)")
        if not _is_simple(poly):
            raise ValidationError("polygon is self-intersecting")
        object.__setattr__(self, "polygon", poly)


@dataclass
class FieldExpansion:
    """Local derivatives of the scalar potential at ``point``.

    ``u = grad Psi`` (so the field is ``-u``), ``v`` the Hessian, ``w`` the
    third-derivative tensor.  ``psi`` is the potential itself when available.
    """

    point: np.ndarray
    u: np.ndarray
    v: np.ndarray | None = None
    w: np.ndarray | None = None
    psi: float | None = None
    scale_convention: str = "reduced"

    @property
    def field(self) -> np.ndarray:
        return -self.u

    def to_si(self, params: PhysicalParams) -> "FieldExpansion":
        if self.scale_convention == "SI":
            return self
        return FieldExpansion(
            point=self.point * params.d,
            u=self.u * params.field_unit,
            v=None if self.v is None else self.v * params.gradient_unit,
            w=None if self.w is None else self.w * params.curvature_unit,
            psi=None if self.psi is None else self.psi * params.potential_unit,
            scale_convention="SI",
        )


# ---------------------------------------------------------------------------
# finite polygons


def kernel_value(x, y, z):
    """Green's function z / (2 pi r^3) propagating the surface potential upward."""
    z = np.asarray(z, float)
    if np.any(z <= 0):
        raise DomainError("kernel is defined only above the film (z > 0)")
    r2 = np.asarray(x, float) ** 2 + np.asarray(y, float) ** 2 + z**2
    return z / (2 * np.pi * r2**1.5)


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    return o1 * o2 < 0 and o3 * o4 < 0


def _is_simple(poly: np.ndarray) -> bool:
    n = len(poly)
    edges = [(poly[k], poly[(k + 1) % n]) for k in range(n)]
    for a, b in itertools.combinations(range(n), 2):
        if (b - a) % n in (1, n - 1):
            continue
        if _segments_cross(*edges[a], *edges[b]):
            return False
    return True


def triangle_solid_angle(r1: np.ndarray, r2: np.ndarray, r3: np.ndarray) -> np.ndarray:
    """Signed solid angle of triangles with vertices at ``r1, r2, r3`` relative to the observer.

    Van Oosterom & Strackee closed form, vectorized over leading axes.
    """
    n1 = np.linalg.norm(r1, axis=-1)
    n2 = np.linalg.norm(r2, axis=-1)
    n3 = np.linalg.norm(r3, axis=-1)
    num = np.einsum("...i,...i->...", r1, np.cross(r2, r3))
    den = (
        n1 * n2 * n3
        + np.einsum("...i,...i->...", r1, r2) * n3
        + np.einsum("...i,...i->...", r1, r3) * n2
        + np.einsum("...i,...i->...", r2, r3) * n1
    )
    return 2 * np.arctan2(num, den)


def polygon_potential_batch(polygons: np.ndarray, points: np.ndarray) -> np.ndarray:
    """psi for polygons ``(P, V, 2)`` at points ``(M, 3)``; result ``(M, P)``.

    Polygons are fan-triangulated from their first vertex; signed solid
    angles make this valid for any simple polygon.  Orientation is
    normalized so counter-clockwise and clockwise input agree.
    """
    polygons = np.asarray(polygons, float)
    points = np.atleast_2d(np.asarray(points, float))
    if np.any(points[:, 2] <= 0):
        raise DomainError("polygon potential requires z > 0")
    x, y = polygons[..., 0], polygons[..., 1]
    orientation = np.sign(np.sum(x * np.roll(y, -1, axis=-1) - np.roll(x, -1, axis=-1) * y, axis=-1))
    verts = np.concatenate([polygons, np.zeros(polygons.shape[:-1] + (1,))], axis=-1)
    rel = verts[None, :, :, :] - points[:, None, None, :]  # (M, P, V, 3)
    total = np.zeros(rel.shape[:2])
    for k in range(1, polygons.shape[1] - 1):
        total += triangle_solid_angle(rel[:, :, 0], rel[:, :, k], rel[:, :, k + 1])
    # seen from above, a counter-clockwise polygon below has negative triple product
    return -orientation[None, :] * total / (2 * np.pi)


def segment_kernel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Closed-form Biot-Savart integral of a straight segment, without mu0 I / 4 pi.

    ``a`` and ``b`` are the segment ends relative to the observer (current
    flows from a to b).  Vectorized over leading axes.
    """
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    dot = np.einsum("...i,...i->...", a, b)
    c = np.cross(a, b)
    # na nb + a.b cancels for long segments; use |a x b|^2 / (na nb - a.b) there
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(dot >= 0, na * nb + dot, np.einsum("...i,...i->...", c, c) / (na * nb - dot))
    return c * ((na + nb) / (na * nb * s))[..., None]


def polygon_gradient_batch(polygons: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Gradient of ``polygon_potential_batch``; result ``(M, P, 3)``.

    Uses the equivalent edge current: the solid-angle gradient of a loop is
    its Biot-Savart line integral.
    """
    polygons = np.asarray(polygons, float)
    points = np.atleast_2d(np.asarray(points, float))
    if np.any(points[:, 2] <= 0):
        raise DomainError("polygon potential requires z > 0")
    x, y = polygons[..., 0], polygons[..., 1]
    orientation = np.sign(np.sum(x * np.roll(y, -1, axis=-1) - np.roll(x, -1, axis=-1) * y, axis=-1))
    verts = np.concatenate([polygons, np.zeros(polygons.shape[:-1] + (1,))], axis=-1)
    rel = verts[None, :, :, :] - points[:, None, None, :]
    nv = polygons.shape[1]
    total = np.zeros(rel.shape[:2] + (3,))
    for k in range(nv):
        total += segment_kernel(rel[:, :, k], rel[:, :, (k + 1) % nv])
    return -orientation[None, :, None] * total / (2 * np.pi)


def polygon_potential(domain: FiniteDomain, r: Sequence[float]) -> float:
    """Unit-magnetization potential of a polygon: subtended solid angle over 2 pi."""
    r = np.asarray(r, float)
    if r[2] <= 0:
        raise DomainError("polygon potential requires z > 0")
    return float(polygon_potential_batch(domain.polygon[None], r[None])[0, 0])


def finite_pattern_potential(domains: Iterable[FiniteDomain], points: np.ndarray) -> np.ndarray:
    """Reduced potential of a finite set of magnetized polygons."""
    points = np.atleast_2d(np.asarray(points, float))
    total = np.zeros(len(points))
    for dom in domains:
        total += dom.magnetization * polygon_potential_batch(dom.polygon[None], points)[:, 0]
    return total


# ---------------------------------------------------------------------------
# periodic patterns


def _mode_grid(geometry: LatticeGeometry, kmax: float):
    """All integer (p, q) with |p b1 + q b2| <= kmax."""
    pmax = int(np.floor(kmax / (2 * np.pi) * np.linalg.norm(geometry.a1))) + 1
    qmax = int(np.floor(kmax / (2 * np.pi) * np.linalg.norm(geometry.a2))) + 1
    p, q = np.meshgrid(np.arange(-pmax, pmax + 1), np.arange(-qmax, qmax + 1), indexing="ij")
    p, q = p.ravel(), q.ravel()
    k = np.outer(p, geometry.b1) + np.outer(q, geometry.b2)
    knorm = np.hypot(k[:, 0], k[:, 1])
    keep = knorm <= kmax * (1 + 1e-12)
    return p[keep], q[keep], k[keep], knorm[keep]


def _form_factor(geometry: LatticeGeometry, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Fourier coefficient of a single pixel at the origin corner, divided into N."""
    n1, n2 = geometry.n1, geometry.n2
    return (
        np.sinc(p / n1) * np.sinc(q / n2) * np.exp(-1j * np.pi * (p / n1 + q / n2)) / (n1 * n2)
    )


@dataclass(frozen=True)
class FourierSpectrum:
    """Exact Fourier series of a piecewise-constant pixel pattern.

    Coefficients are generated on demand for any mode index; ``cutoff`` (in
    units of 2 pi / d) caps the retained ``|k|`` when set.
    """

    geometry: LatticeGeometry
    dft: np.ndarray
    cutoff: float | None = None

    def coefficients(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        g = self.geometry
        return self.dft[np.mod(q, g.n2), np.mod(p, g.n1)] * _form_factor(g, p, q)

    def coefficient(self, p: int, q: int) -> complex:
        return complex(self.coefficients(np.array([p]), np.array([q]))[0])

    def with_cutoff(self, cutoff: float | None) -> "FourierSpectrum":
        return dataclasses.replace(self, cutoff=cutoff)

    def modes(self, zmin: float, tol: float = DEFAULT_MODE_TOL):
        """Modes needed at heights >= zmin: (p, q, k, |k|, coefficient).

        Returns the truncation bound ``exp(-zmin * kmax)`` as the last item.
        """
        if zmin <= 0:
            raise DomainError("evaluation height must be positive")
        kmax = -np.log(tol) / zmin
        if self.cutoff is not None:
            kmax = min(kmax, 2 * np.pi * self.cutoff)
        p, q, k, knorm = _mode_grid(self.geometry, kmax)
        coef = self.coefficients(p, q)
        bound = float(np.exp(-zmin * kmax))
        return p, q, k, knorm, coef, bound


def spectrum_of(pattern: MagnetizationPattern, cutoff: float | None = None) -> FourierSpectrum:
    """Fourier spectrum of a pixel pattern (linear in the pixel values)."""
    dft = np.fft.fft2(pattern.values)
    dft.setflags(write=False)
    return FourierSpectrum(pattern.geometry, dft, cutoff)


def _parse_selector(sel: str) -> tuple[int, ...]:
    if sel in ("", "psi"):
        return ()
    try:
        return tuple(AXES[c] for c in sel)
    except KeyError:
        raise ValidationError(f"bad derivative selector {sel!r}") from None


def _mode_factors(k: np.ndarray, knorm: np.ndarray) -> np.ndarray:
    """Per-mode multipliers for d/dx, d/dy, d/dz: (3, n_modes)."""
    return np.stack([1j * k[:, 0], 1j * k[:, 1], -knorm.astype(complex)])


def _symmetrize_from(values: dict, order: int) -> np.ndarray:
    out = np.zeros(next(iter(values.values())).shape + (3,) * order)
    for idx in itertools.product(range(3), repeat=order):
        out[(...,) + idx] = values[tuple(sorted(idx))]
    return out


class PeriodicField:
    """Evaluator for a periodic pattern's potential and its derivatives.

    Modes are chosen for the lowest evaluation height ``zmin``; asking for
    points below ``zmin`` rebuilds the mode list.
    """

    def __init__(self, spectrum: FourierSpectrum, zmin: float = 0.25, tol: float = DEFAULT_MODE_TOL):
        self.spectrum = spectrum
        self.tol = tol
        self._build(zmin)

    @classmethod
    def from_pattern(cls, pattern: MagnetizationPattern, zmin: float = 0.25, cutoff=None, tol=DEFAULT_MODE_TOL):
        return cls(spectrum_of(pattern, cutoff), zmin, tol)

    @property
    def geometry(self) -> LatticeGeometry:
        return self.spectrum.geometry

    def _build(self, zmin: float):
        p, q, k, knorm, coef, bound = self.spectrum.modes(zmin, self.tol)
        order = np.argsort(knorm, kind="stable")
        self.zmin = zmin
        self._all = (p[order], q[order], k[order], knorm[order], coef[order])
        self.p, self.q, self.k, self.knorm, self.coef = self._all
        self.truncation_bound = bound

    def _ensure(self, z: np.ndarray):
        """Select the modes needed for the lowest height in ``z``."""
        zlow = float(np.min(z))
        if zlow <= 0:
            raise DomainError("periodic potential requires z > 0")
        if zlow < self.zmin:
            self._build(zlow)
        n = int(np.searchsorted(self._all[3], -np.log(self.tol) / zlow * (1 + 1e-12), side="right"))
        self.p, self.q, self.k, self.knorm, self.coef = (a[:n] for a in self._all)

    def _terms(self, points: np.ndarray) -> np.ndarray:
        self._ensure(points[:, 2])
        phase = points[:, :2] @ self.k.T
        return np.exp(1j * phase - np.outer(points[:, 2], self.knorm))

    def potential(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, float))
        return np.real(self._terms(points) @ self.coef)

    def derivative(self, points, selector: str) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, float))
        axes = _parse_selector(selector)
        E = self._terms(points)
        fac = _mode_factors(self.k, self.knorm)
        c = self.coef.copy()
        for a in axes:
            c = c * fac[a]
        return np.real(E @ c)

    def field(self, points) -> np.ndarray:
        """B = -grad Psi in reduced units, shape (M, 3)."""
        points = np.atleast_2d(np.asarray(points, float))
        E = self._terms(points)
        fac = _mode_factors(self.k, self.knorm)
        return -np.real(E @ (fac * self.coef).T)

    def expansion_arrays(self, points, order: int = 2):
        """psi (M,), u (M,3), v (M,3,3) and w (M,3,3,3) up to ``order``."""
        if order not in (1, 2, 3):
            raise ValidationError("derivative order must be 1, 2 or 3")
        points = np.atleast_2d(np.asarray(points, float))
        E = self._terms(points)
        fac = _mode_factors(self.k, self.knorm)
        psi = np.real(E @ self.coef)
        cols = {}
        for n in range(1, order + 1):
            for idx in itertools.combinations_with_replacement(range(3), n):
                c = self.coef.copy()
                for a in idx:
                    c = c * fac[a]
                cols[idx] = c
        keys = list(cols)
        vals = np.real(E @ np.stack([cols[key] for key in keys], axis=1))
        by_order = {n: {} for n in range(1, order + 1)}
        for col, key in enumerate(keys):
            by_order[len(key)][key] = vals[:, col]
        u = _symmetrize_from(by_order[1], 1)
        v = _symmetrize_from(by_order[2], 2) if order >= 2 else None
        w = _symmetrize_from(by_order[3], 3) if order >= 3 else None
        return psi, u, v, w

    def expansion(self, r, order: int = 2) -> FieldExpansion:
        r = np.asarray(r, float)
        psi, u, v, w = self.expansion_arrays(r[None], order)
        return FieldExpansion(
            point=r,
            u=u[0],
            v=None if v is None else v[0],
            w=None if w is None else w[0],
            psi=float(psi[0]),
        )

    def field_plane(self, z: float, ngrid: int, with_gradient: bool = False):
        """Field on the ``ngrid x ngrid`` fractional grid of one cell at height z.

        Returns cartesian grid points (ng, ng, 2) indexed [s, t] and B (ng, ng, 3);
        with ``with_gradient`` also dB (ng, ng, 3, 3).
        """
        self._ensure(np.array([z]))
        damp = np.exp(-z * self.knorm)
        keep = damp > self.tol
        p, q = self.p[keep], self.q[keep]
        c = self.coef[keep] * damp[keep]
        fac = _mode_factors(self.k[keep], self.knorm[keep])
        flat = np.mod(p, ngrid) * ngrid + np.mod(q, ngrid)

        def grid_of(coef):
            folded = np.bincount(flat, weights=coef.real, minlength=ngrid * ngrid) + 1j * np.bincount(
                flat, weights=coef.imag, minlength=ngrid * ngrid
            )
            return np.real(np.fft.ifft2(folded.reshape(ngrid, ngrid))) * ngrid * ngrid

        B = np.stack([-grid_of(c * fac[a]) for a in range(3)], axis=-1)
        s = np.arange(ngrid) / ngrid
        S, T = np.meshgrid(s, s, indexing="ij")
        xy = self.geometry.to_cartesian(np.stack([S, T], axis=-1))
        if not with_gradient:
            return xy, B
        dB = np.empty((ngrid, ngrid, 3, 3))
        for a, b in itertools.combinations_with_replacement(range(3), 2):
            dB[..., a, b] = dB[..., b, a] = -grid_of(c * fac[a] * fac[b])
        return xy, B, dB


def periodic_potential(spectrum: FourierSpectrum, r, tol: float = DEFAULT_MODE_TOL):
    """Reduced potential of a periodic pattern and the truncation bound used."""
    r = np.asarray(r, float)
    if r[2] <= 0:
        raise DomainError("periodic potential requires z > 0")
    ev = PeriodicField(spectrum, zmin=float(r[2]), tol=tol)
    return float(ev.potential(r[None])[0]), ev.truncation_bound


def field_expansion(spectrum: FourierSpectrum, r, order: int = 2, tol: float = DEFAULT_MODE_TOL) -> FieldExpansion:
    r = np.asarray(r, float)
    if r[2] <= 0:
        raise DomainError("field expansion requires z > 0")
    return PeriodicField(spectrum, zmin=float(r[2]), tol=tol).expansion(r, order)


def basis_derivative_rows(
    geometry: LatticeGeometry,
    points: Sequence[Sequence[float]],
    which: Sequence[str],
    tol: float = DEFAULT_MODE_TOL,
    cutoff: float | None = None,
) -> np.ndarray:
    """Per-pixel coefficient rows, one per (point, selector) pair, point-major.

    ``row @ pattern.flat`` equals the selected derivative of the reduced
    potential at that point.
    """
    points = np.atleast_2d(np.asarray(points, float))
    if np.any(points[:, 2] <= 0):
        raise DomainError("constraint points must lie above the film")
    n1, n2 = geometry.n1, geometry.n2
    rows = []
    for pt in points:
        kmax = -np.log(tol) / pt[2]
        if cutoff is not None:
            kmax = min(kmax, 2 * np.pi * cutoff)
        p, q, k, knorm = _mode_grid(geometry, kmax)
        base = _form_factor(geometry, p, q) * np.exp(1j * (k @ pt[:2]) - pt[2] * knorm)
        fac = _mode_factors(k, knorm)
        flat = np.mod(q, n2) * n1 + np.mod(p, n1)
        for sel in which:
            c = base.copy()
            for a in _parse_selector(sel):
                c = c * fac[a]
            folded = np.bincount(flat, weights=c.real, minlength=n1 * n2) + 1j * np.bincount(
                flat, weights=c.imag, minlength=n1 * n2
            )
            rows.append(np.real(np.fft.fft2(folded.reshape(n2, n1))).ravel())
    return np.array(rows)


def random_pattern(geometry: LatticeGeometry, rng: np.random.Generator, binary: bool = True) -> MagnetizationPattern:
    vals = rng.integers(0, 2, (geometry.n2, geometry.n1)) if binary else rng.random((geometry.n2, geometry.n1))
    return MagnetizationPattern(geometry, vals)


# ---------------------------------------------------------------------------
# pattern files


def write_pattern(path, pattern: MagnetizationPattern, params: PhysicalParams) -> None:
    """Header ``d zeta n1 n2 Mz delta`` then n2 rows of n1 pixel values."""
    g = pattern.geometry
    lines = [" ".join([repr(float(params.d)), repr(float(g.zeta)), str(g.n1), str(g.n2),
                       repr(float(params.Mz)), repr(float(params.delta))])]
    if pattern.binary:
        for row in pattern.values.astype(int):
            lines.append(" ".join(map(str, row)))
    else:
        for row in pattern.values:
            lines.append(" ".join(repr(float(x)) for x in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_pattern(path):
    """Inverse of ``write_pattern``; returns ``(pattern, params)``."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 6:
            raise ValidationError(f"{path}: header needs 6 fields (d zeta n1 n2 Mz delta)")
        try:
            d, zeta = float(header[0]), float(header[1])
            n1, n2 = int(header[2]), int(header[3])
            Mz, delta = float(header[4]), float(header[5])
        except ValueError as exc:
            raise ValidationError(f"{path}: malformed header: {exc}") from None
        try:
            values = np.loadtxt(fh, ndmin=2)
        except ValueError as exc:
            raise ValidationError(f"{path}: malformed pixel rows: {exc}") from None
    if values.shape != (n2, n1):
        raise ValidationError(f"{path}: expected {n2} rows of {n1} values, got {values.shape}")
    geometry = LatticeGeometry(zeta, n1, n2)
    return MagnetizationPattern(geometry, values), PhysicalParams(Mz=Mz, delta=delta, d=d)
