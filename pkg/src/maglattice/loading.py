"""Z-wire loading trap and the transfer trajectory into the lattice."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from . import analysis as an
from .fieldcore import GAUSS, MU0, PhysicalParams, ValidationError, segment_kernel

logger = logging.getLogger(__name__)


class WireSingularityError(ValueError):
    pass


class InfeasibleFloorError(RuntimeError):
    def __init__(self, message, height=None):
        super().__init__(message)
        self.height = height


@dataclass(frozen=True)
class ZWireSpec:
    """Z-shaped wire below the film; all lengths in metres.

    The central segment runs along ``orientation`` (in-plane angle from x)
    through the point beneath ``center``; the two leads leave its ends in
    opposite in-plane directions (``mirror`` swaps them, giving an S).
    """

    central_length: float = 1e-3
    standoff: float = 0.4e-3
    orientation: float = 0.0
    current: float = 0.0
    lead_length: float | None = None
    center: tuple = (0.0, 0.0)
    mirror: bool = False

    def __post_init__(self):
        if self.central_length <= 0 or self.standoff <= 0:
            raise ValidationError("wire length and standoff must be positive")
        lead = 10 * self.central_length if self.lead_length is None else self.lead_length
        if lead < 10 * self.central_length * (1 - 1e-12):
            raise ValidationError("lead_length must be at least 10 central lengths")
        object.__setattr__(self, "lead_length", float(lead))

    @classmethod
    def aligned(cls, ioffe_axis, sign: float = 1.0, bias_hint=None, **kw) -> "ZWireSpec":
        """Central segment along an in-plane Ioffe axis.

        Orientation and handedness are picked so that, for positive current,
        the lead field above the centre points along ``sign * ioffe_axis``
        (``sign`` follows B_I, so the leads confine along the axis) and, when
        ``bias_hint`` is given, the bias cancelling the wire field points
        along the hint (smooth hand-over to the lattice bias).
        """
        ax = np.asarray(ioffe_axis, float)
        current = kw.pop("current", 0.0)
        base = float(np.arctan2(ax[1], ax[0]))
        best = None
        for orient in (base, base + np.pi):
            for mirror in (False, True):
                spec = cls(orientation=orient, current=1.0, mirror=mirror, **kw)
                B = zwire_field(spec, np.array([spec.center[0], spec.center[1], 0.0]))
                ok_axis = B @ ax * sign > 0
                ok_bias = bias_hint is None or -B @ np.asarray(bias_hint, float) > 0
                if ok_axis and ok_bias:
                    return spec.with_current(current)
                if ok_axis and best is None:
                    best = spec
        return best.with_current(current)

    def with_current(self, current: float) -> "ZWireSpec":
        return replace(self, current=float(current))

    def vertices(self) -> np.ndarray:
        nu = np.array([np.cos(self.orientation), np.sin(self.orientation), 0.0])
        n = np.array([-nu[1], nu[0], 0.0]) * (-1 if self.mirror else 1)
        c = np.array([self.center[0], self.center[1], -self.standoff])
        half, lead = 0.5 * self.central_length, self.lead_length
        return np.array([c - half * nu + lead * n, c - half * nu, c + half * nu, c + half * nu - lead * n])

    def lead_error_bound(self, r) -> float:
        """Upper bound [T] on the field of the lead parts beyond lead_length."""
        v = self.vertices()
        out = 0.0
        for end in (v[0], v[3]):
            dist = np.linalg.norm(np.asarray(r, float) - end)
            out += MU0 * abs(self.current) / (4 * np.pi * dist)
        return out


def zwire_field(spec: ZWireSpec, r) -> np.ndarray:
    """Field [T] of the three straight segments at r [m] (shape (3,) or (M, 3))."""
    r = np.asarray(r, float)
    pts = np.atleast_2d(r)
    v = spec.vertices()
    total = np.zeros_like(pts)
    for a, b in zip(v[:-1], v[1:]):
        ra, rb = a[None] - pts, b[None] - pts
        seg = b - a
        cross = np.linalg.norm(np.cross(ra, seg[None]), axis=1) / np.linalg.norm(seg)
        t = -(ra @ seg) / (seg @ seg)
        if np.any((cross < 1e-12 * np.linalg.norm(seg)) & (t >= 0) & (t <= 1)):
            raise WireSingularityError("evaluation point lies on a wire segment")
        total += segment_kernel(ra, rb)
    total *= MU0 * spec.current / (4 * np.pi)
    return total[0] if r.ndim == 1 else total


class ZWireField:
    """Z-wire as a field source in the reduced units of ``params``.

    First and second derivatives use 4th-order central differences.
    """

    def __init__(self, spec: ZWireSpec, params: PhysicalParams):
        self.spec = spec
        self.params = params

    def field(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        return zwire_field(self.spec, pts * self.params.d) / self.params.field_unit

    def _step(self, pts):
        return 1e-3 * (pts[:, 2] + self.spec.standoff / self.params.d)

    def _dfield(self, pts, h):
        """d B_j / d x_i for each point, shape (M, 3, 3)."""
        offs = np.array([-2, -1, 1, 2])
        wts = np.array([1, -8, 8, -1]) / 12.0
        out = np.empty((len(pts), 3, 3))
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1.0
            stack = pts[None] + offs[:, None, None] * h[None, :, None] * e
            B = self.field(stack.reshape(-1, 3)).reshape(4, len(pts), 3)
            out[:, i, :] = np.einsum("k,kmj->mj", wts, B) / h[:, None]
        return out

    def expansion_arrays(self, points, order: int = 2):
        pts = np.atleast_2d(np.asarray(points, float))
        u = -self.field(pts)
        psi = np.zeros(len(pts))
        if order < 2:
            return psi, u, None, None
        h = self._step(pts)
        v = -self._dfield(pts, h)
        v = 0.5 * (v + v.transpose(0, 2, 1))
        if order < 3:
            return psi, u, v, None
        hw = 10 * h
        offs = np.array([-2, -1, 1, 2])
        wts = np.array([1, -8, 8, -1]) / 12.0
        w = np.empty((len(pts), 3, 3, 3))
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1.0
            acc = np.zeros((len(pts), 3, 3))
            for o, c in zip(offs, wts):
                shifted = pts + o * hw[:, None] * e
                acc += c * -self._dfield(shifted, h)
            w[:, i] = acc / hw[:, None, None]
        # symmetrize over all index permutations
        w = (w + w.transpose(0, 1, 3, 2) + w.transpose(0, 2, 1, 3) + w.transpose(0, 2, 3, 1)
             + w.transpose(0, 3, 1, 2) + w.transpose(0, 3, 2, 1)) / 6
        return psi, u, v, w


def combined_trap(lattice, zwire: ZWireSpec, bias: an.BiasConfig, atom: an.AtomSpec, seed,
                  params: PhysicalParams) -> an.TrapReport:
    """Trap search and characterization on lattice + Z-wire + bias (reduced seed)."""
    src = combined_source(lattice, zwire, params)
    pos = an.find_trap(src, bias, seed, zmax=1e3)
    return an.characterize_trap(src, bias, atom, pos, params, check_tol=1e-4)


def combined_source(lattice, zwire: ZWireSpec, params: PhysicalParams):
    if zwire is None or zwire.current == 0:
        return lattice
    return an.CombinedSource(lattice, ZWireField(zwire, params))


# ---------------------------------------------------------------------------
# trajectory


@dataclass
class TrajectorySample:
    h: float  # m
    current: float  # A
    B0_G: np.ndarray
    B_I_G: float
    depth_G: float
    trap: np.ndarray  # reduced position
    min_field_G: float = float("nan")
    surface_min_G: float = float("nan")
    secondary: list = field(default_factory=list)


@dataclass
class LoadingTrajectory:
    samples: list
    depth_floor: float
    site_xy: tuple
    zwire: ZWireSpec

    def rows(self):
        for s in self.samples:
            yield [s.h * 1e6, s.current, *s.B0_G, s.B_I_G, s.depth_G, s.min_field_G, s.surface_min_G]


TRAJECTORY_COLUMNS = ["h_prime_um", "I_z_A", "B0x_G", "B0y_G", "B0z_G", "B_I_G", "depth_G", "min_field_G",
                      "surface_min_field_G"]


def write_trajectory_csv(traj: LoadingTrajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(TRAJECTORY_COLUMNS)
        for row in traj.rows():
            wr.writerow([f"{x:.10g}" for x in row])


def log_schedule(heights, start: float, end: float) -> np.ndarray:
    """Values linear in log(h) from ``start`` at heights[0] to ``end`` at heights[-1]."""
    heights = np.asarray(heights, float)
    if len(heights) == 1:
        return np.array([end])
    t = np.log(heights / heights[0]) / np.log(heights[-1] / heights[0])
    return start + t * (end - start)


def _solve_sample(lattice, zwire, params, site_xy, hr, BI, axis):
    src = combined_source(lattice, zwire, params)
    return an.solve_bias(src, site_xy, hr, BI, axis, max_radius=0.5)


def _minimal_current(depth_at, target, current_max, h):
    """Smallest I in [0, current_max] with depth_at(I) >= target."""
    grid = np.linspace(0.0, current_max, 51)
    vals = np.full(len(grid), np.nan)
    for i, I in enumerate(grid):
        try:
            vals[i] = depth_at(I) - target
        except (an.ConvergenceError, an.NotATrapError):
            continue
        if vals[i] >= 0:
            break
    ok = np.flatnonzero(vals >= 0)
    if not len(ok):
        best = np.nanmax(vals) + target if np.any(np.isfinite(vals)) else float("nan")
        raise InfeasibleFloorError(
            f"depth floor unreachable at h'={h * 1e6:.3f} um (best depth {best:.3f} G for I_z <= {current_max} A)", h)
    j = ok[0]
    if j == 0:
        return 0.0
    if np.isnan(vals[j - 1]):
        return float(grid[j])
    return float(optimize.brentq(lambda x: depth_at(x) - target, grid[j - 1], grid[j], xtol=1e-12))


def final_ioffe_for_floor(lattice, params: PhysicalParams, site_xy, h: float, B_I: float, depth_floor: float,
                          axis=None) -> float:
    """B_I (gauss) of the lattice-only final trap, lowered in magnitude if needed to reach the floor."""
    gauss = GAUSS / params.field_unit
    site_xy = np.asarray(site_xy, float)

    def excess(bi):
        bias, _ = an.solve_bias(lattice, site_xy, h / params.d, bi * gauss, axis)
        return bias.depth / gauss - depth_floor

    if excess(B_I) >= 0:
        return float(B_I)
    if excess(np.sign(B_I) * 1e-9) < 0:
        raise InfeasibleFloorError(f"lattice-only depth stays below {depth_floor} G for any Ioffe field", h)
    return float(optimize.brentq(excess, np.sign(B_I) * 1e-9, B_I, xtol=1e-12))


def zwire_for_lattice(lattice, params: PhysicalParams, axis, site_xy=(0.0, 0.0), h_end: float = 2.5e-6,
                      B_I_end: float = 9.8, **kw) -> ZWireSpec:
    """Z-wire aligned with the Ioffe axis whose bias hands over smoothly to the lattice-only bias."""
    gauss = GAUSS / params.field_unit
    bias, _ = an.solve_bias(lattice, np.asarray(site_xy, float), h_end / params.d, B_I_end * gauss, axis)
    kw.setdefault("center", tuple(float(c) * params.d for c in site_xy))
    return ZWireSpec.aligned(np.asarray(axis, float), float(np.sign(B_I_end)), bias_hint=bias.B0, **kw)


def plan_trajectory(lattice, zwire: ZWireSpec, params: PhysicalParams, site_xy=(0.0, 0.0),
                    h_start: float = 100e-6, h_end: float = 2.5e-6, depth_floor: float = 16.5,
                    B_I_start: float = 2.0, B_I_end: float = 9.8, axis=None, n_samples: int = 60,
                    schedule=None, current_max: float = 50.0, floor_margin: float = 0.0,
                    final_floor: bool = False) -> LoadingTrajectory:
    """Controls (I_z, B0) along a log-spaced descending ladder of heights h'.

    At each h' the bias places an IP point (null gradient tensor direction,
    total field B_I along it) at (site, h').  The Z-wire current is the
    smallest non-negative value giving ||B0|| - |B_I| >= ``depth_floor`` G.
    The last sample is pinned to I_z = 0 (lattice only); its depth is
    whatever the lattice provides and is checked by the audit, unless
    ``final_floor`` is set: then a final B_I whose lattice-only depth falls
    short of the floor is lowered until the floor is met, and the log
    schedule ends at that value (``schedule`` must not be given).
    ``site_xy`` is in units of d; B_I values are signed gauss.
    """
    if h_start < h_end:
        raise ValidationError("h_start must not be below h_end")
    hs = np.array([h_end]) if np.isclose(h_start, h_end) else np.geomspace(h_start, h_end, n_samples)
    gauss = GAUSS / params.field_unit
    site_xy = np.asarray(site_xy, float)
    if final_floor:
        if schedule is not None:
            raise ValidationError("final_floor adjusts the default schedule; do not pass one")
        B_I_end = final_ioffe_for_floor(lattice, params, site_xy, h_end, B_I_end, depth_floor, axis)
    BIs = np.asarray(schedule, float) if schedule is not None else log_schedule(hs, B_I_start, B_I_end)
    if len(BIs) != len(hs):
        raise ValidationError("schedule length must match the number of heights")
    samples = []
    for i, (h, BI_G) in enumerate(zip(hs, BIs)):
        hr, BI = h / params.d, BI_G * gauss

        def depth_at(I):
            bias, _ = _solve_sample(lattice, zwire.with_current(I), params, site_xy, hr, BI, axis)
            return bias.depth / gauss

        if i == len(hs) - 1:
            I = 0.0
        else:
            I = _minimal_current(depth_at, depth_floor + floor_margin, current_max, h)
        bias, pos = _solve_sample(lattice, zwire.with_current(I), params, site_xy, hr, BI, axis)
        B0_G, _ = bias.gauss(params)
        samples.append(TrajectorySample(h, I, B0_G, float(BI_G), bias.depth / gauss, pos))
        logger.info("h'=%.3f um I_z=%.4f A depth=%.3f G", h * 1e6, I, bias.depth / gauss)
    return LoadingTrajectory(samples, depth_floor, tuple(site_xy), zwire)


@dataclass
class AuditReport:
    violations: list
    depth_ok: list
    zeros: list
    surface_ok: list

    @property
    def passed(self) -> bool:
        return not self.violations


def audit_trajectory(traj: LoadingTrajectory, lattice, params: PhysicalParams, geometry, axis=None,
                     zero_threshold_G: float = 0.01, surface_z: float = 1e-6, surface_min_G: float = 120.0,
                     scan_zmin: float = 0.1e-6, ngrid: int = 64, nz: int = 64,
                     find_secondary: bool = True) -> AuditReport:
    """Per-sample depth, field-zero and surface-field checks (fills sample audit fields)."""
    gauss = GAUSS / params.field_unit
    violations, depth_ok, zeros, surface_ok = [], [], [], []
    for s in traj.samples:
        wire = traj.zwire.with_current(s.current)
        src = combined_source(lattice, wire, params)
        B0 = s.B0_G * gauss
        bias = an.BiasConfig(B0, s.B_I_G * gauss, axis if axis is not None else [1, 0, 0])
        d_ok = s.depth_G >= traj.depth_floor - 1e-9  # root-finder tolerance
        depth_ok.append(d_ok)
        if not d_ok:
            violations.append((s.h, "depth", s.depth_G))
        scan = an.detect_zeros(src, B0, geometry, scan_zmin / params.d, max(s.h / params.d, 4.0),
                               zero_threshold_G * gauss, ngrid=ngrid, nz=nz)
        zeros.append(scan.points)
        if scan.points:
            violations.append((s.h, "zero", len(scan.points)))
        _, Bs = an.plane_field(src, geometry, surface_z / params.d, 128)
        smin = float(np.linalg.norm(Bs + B0, axis=-1).min() / gauss)
        s.surface_min_G = smin
        surface_ok.append(smin > surface_min_G)
        if smin <= surface_min_G:
            violations.append((s.h, "surface", smin))
        s.min_field_G = float(an.field_magnitude(src, B0, s.trap)[0] / gauss)
        if find_secondary:
            s.secondary = secondary_wells(src, bias, geometry, s.trap, params)
    return AuditReport(violations, depth_ok, zeros, surface_ok)


def secondary_wells(src, bias, geometry, trap, params, zmin=0.2, zmax=None, ngrid=32, nz=24):
    """Local minima of |b| other than ``trap`` or its images (reduced positions, depth in G to B0)."""
    zmax = max(trap[2] * 1.5, 1.0) if zmax is None else zmax
    gauss = GAUSS / params.field_unit
    tkey = np.r_[np.mod(geometry.to_fractional(np.asarray(trap[:2], float)) + 1e-9, 1.0) - 1e-9, trap[2]]
    out = []
    for key, pos, val in an.local_minima(src, bias.B0, geometry, zmin, zmax, ngrid, nz):
        if an._same_site(key, tkey, 0.05):
            continue
        out.append((pos, (np.linalg.norm(bias.B0) - val) / gauss))
    return out
