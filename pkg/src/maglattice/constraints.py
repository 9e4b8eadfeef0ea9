"""Linear trap constraints a_k . m = C b_k on pixel magnetizations."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fieldcore import LatticeGeometry, ValidationError, basis_derivative_rows
from .lpsolve import InfeasibleError, numerical_rank

logger = logging.getLogger(__name__)

# v components fixed by a gradient constraint; zz follows from zero trace
GRADIENT_COMPONENTS = ("xx", "xy", "xz", "yy", "yz")
_IDX = {"x": 0, "y": 1, "z": 2}


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def euler_rotation(phi: float, theta: float, psi: float) -> np.ndarray:
    """Rotation taking z to the Ioffe axis (sin t sin p, sin t cos p, cos t).

    ``phi`` turns the two transverse principal axes about that axis.
    """
    return _rz(-psi) @ _rx(-theta) @ _rz(-phi)


def ioffe_axis(theta: float, psi: float) -> np.ndarray:
    return np.array([np.sin(theta) * np.sin(psi), np.sin(theta) * np.cos(psi), np.cos(theta)])


def gradient_target(euler) -> np.ndarray:
    """R diag(1, -1, 0) R^T for Euler angles (phi, theta, psi)."""
    R = euler_rotation(*euler)
    return R @ np.diag([1.0, -1.0, 0.0]) @ R.T


def square_gradient_matrix(psi: float) -> np.ndarray:
    """In-plane Ioffe axis target; equals gradient_target((pi/4, pi/2, psi))."""
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[0, 0, c], [0, 0, -s], [c, -s, 0.0]])


@dataclass(frozen=True)
class TrapSite:
    position: tuple
    euler: tuple = (np.pi / 4, np.pi / 2, 0.0)
    label: str = ""

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3:
            raise ValidationError("trap position must be 3D")
        if pos[2] <= 0:
            raise ValidationError("trap height must be positive")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "euler", tuple(float(a) for a in self.euler))

    @property
    def ioffe_axis(self) -> np.ndarray:
        return ioffe_axis(self.euler[1], self.euler[2])


@dataclass
class ConstraintRow:
    coefficients: np.ndarray
    target: float
    kind: str
    description: str = ""


@dataclass
class DesignProgram:
    """Constraint rows for one periodic unit cell."""

    geometry: LatticeGeometry
    rows: list = field(default_factory=list)
    sites: list = field(default_factory=list)
    _keys: set = field(default_factory=set, repr=False)

    @property
    def n_pixels(self) -> int:
        return self.geometry.n_pixels

    def matrix(self):
        """(A, b) in reduced units, degenerate rows handled per policy."""
        A, b = [], []
        for row in self.rows:
            coeffs = np.asarray(row.coefficients, float)
            if not np.any(np.abs(coeffs) > 1e-13 * max(1.0, _row_scale(self.rows))):
                if row.target == 0:
                    warnings.warn(f"dropping identically zero constraint: {row.description}")
                    continue
                raise InfeasibleError(
                    f"constraint '{row.description}' has no pixel dependence but target {row.target}",
                    certificate=None,
                )
            A.append(coeffs)
            b.append(row.target)
        if not A:
            raise ValidationError("program has no usable constraint rows")
        A, b = np.array(A), np.array(b)
        if not np.any(b):
            raise ValidationError("at least one constraint needs a nonzero target")
        return A, b

    def independent_rank(self) -> int:
        A, _ = self.matrix()
        return numerical_rank(A)

    def add_row(self, coefficients, target, kind, description=""):
        coefficients = np.asarray(coefficients, float)
        if coefficients.shape != (self.n_pixels,):
            raise ValidationError("coefficient length must equal the pixel count")
        self.rows.append(ConstraintRow(coefficients, float(target), kind, description))
        return self


def _row_scale(rows) -> float:
    return max((float(np.max(np.abs(r.coefficients))) for r in rows), default=0.0)


def _rows(program: DesignProgram, point, selectors):
    return basis_derivative_rows(program.geometry, [point], list(selectors))


def add_gradient_constraints(program: DesignProgram, site: TrapSite, target_tensor=None) -> DesignProgram:
    """Fix the gradient tensor v at ``site`` to C * target (5 rows)."""
    T = gradient_target(site.euler) if target_tensor is None else np.asarray(target_tensor, float)
    if T.shape != (3, 3) or not np.allclose(T, T.T, atol=1e-12):
        raise ValidationError("gradient target must be a symmetric 3x3 tensor")
    if abs(np.trace(T)) > 1e-10 * max(1.0, np.abs(T).max()):
        raise ValidationError("gradient target must be traceless")
    key = ("site", site.position)
    if key in program._keys:
        raise ValidationError(f"duplicate trap site at {site.position}")
    program._keys.add(key)
    program.sites.append(site)
    rows = _rows(program, site.position, GRADIENT_COMPONENTS)
    for comp, row in zip(GRADIENT_COMPONENTS, rows):
        target = T[_IDX[comp[0]], _IDX[comp[1]]]
        program.add_row(row, target, "gradient-component", f"v_{comp} at {site.label or site.position}")
    return program


def add_field_constraint(program: DesignProgram, point, component: str, target: float) -> DesignProgram:
    """Fix u_component = C * target at ``point`` (u = grad Psi, field B = -u)."""
    if component not in _IDX:
        raise ValidationError(f"component must be x, y or z, got {component!r}")
    point = tuple(float(v) for v in point)
    if point[2] <= 0:
        raise ValidationError("constraint point must lie above the film")
    row = _rows(program, point, [component])[0]
    return program.add_row(row, target, "field-component", f"u_{component} at {point}")


def add_curvature_constraint(program: DesignProgram, point, selector: str, target: float) -> DesignProgram:
    """Fix one third-derivative component w_ijk at ``point``."""
    if len(selector) != 3 or any(c not in _IDX for c in selector):
        raise ValidationError("curvature selector needs three axes, e.g. 'xxz'")
    row = _rows(program, tuple(point), [selector])[0]
    return program.add_row(row, target, "curvature-component", f"w_{selector} at {tuple(point)}")


_SELECTORS = {"u": ("x", "y", "z"), "v": GRADIENT_COMPONENTS}


def add_equality_constraints(program: DesignProgram, site_a, site_b, selector: str = "u") -> DesignProgram:
    """Rows (a_k(site_a) - a_k(site_b)) . m = 0 for the chosen derivatives."""
    pa = tuple(float(v) for v in getattr(site_a, "position", site_a))
    pb = tuple(float(v) for v in getattr(site_b, "position", site_b))
    if np.allclose(pa, pb):
        raise ValidationError("equality constraint needs two distinct sites")
    comps = _SELECTORS.get(selector, (selector,))
    ra = basis_derivative_rows(program.geometry, [pa], list(comps))
    rb = basis_derivative_rows(program.geometry, [pb], list(comps))
    for comp, diff in zip(comps, ra - rb):
        program.add_row(diff, 0.0, "equality", f"{comp} equal at {pa} and {pb}")
    return program
