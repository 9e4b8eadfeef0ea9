"""Closed-form two-wave lattices of in-plane Ioffe-Pritchard traps.

Lengths share the unit of ``d`` and the potential shares the unit of
``amplitude``; with ``d = 1`` everything is in reduced units and
``TwoWaveField`` can be used wherever a pattern field source is expected.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .fieldcore import FieldExpansion, ValidationError, _symmetrize_from


@dataclass(frozen=True)
class TwoWaveSpec:
    zeta: float
    psi: float
    d: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        if not 0 < self.zeta < np.pi:
            raise ValidationError("zeta must lie in (0, pi)")
        if abs(np.cos(self.psi)) < 1e-12:
            raise ValidationError("cos(psi) = 0 leaves alpha undefined")
        if self.d <= 0:
            raise ValidationError("period must be positive")

    @property
    def alpha(self) -> float:
        # principal branch of the arctangent
        return float(np.arctan(np.cos(self.psi + self.zeta) / np.cos(self.psi)))

    @property
    def decay(self) -> float:
        return 2 * np.pi / (self.d * np.sin(self.zeta))

    @property
    def wavevectors(self) -> np.ndarray:
        d, zeta = self.d, self.zeta
        return np.array([[2 * np.pi / d, -2 * np.pi / (d * np.tan(zeta))], [0.0, 2 * np.pi / (d * np.sin(zeta))]])

    @property
    def weights(self) -> np.ndarray:
        return self.amplitude * np.array([np.cos(self.alpha), np.sin(self.alpha)])

    @property
    def lattice_vectors(self) -> np.ndarray:
        return self.d * np.array([[1.0, 0.0], [np.cos(self.zeta), np.sin(self.zeta)]])

    @property
    def ioffe_axis(self) -> np.ndarray:
        return np.array([np.sin(self.psi), np.cos(self.psi), 0.0])


def analytic_potential(spec: TwoWaveSpec, r) -> np.ndarray:
    r = np.atleast_2d(np.asarray(r, float))
    phase = r[:, :2] @ spec.wavevectors.T
    out = np.sin(phase) @ spec.weights * np.exp(-spec.decay * r[:, 2])
    return out if out.size > 1 else float(out[0])


def analytic_bias(spec: TwoWaveSpec, h: float) -> np.ndarray:
    """Bias that cancels the lattice field at (0, 0, h)."""
    if h <= 0:
        raise ValidationError("height must be positive")
    a = spec.alpha
    scale = spec.amplitude / spec.d * np.exp(-spec.decay * h) * 2 * np.pi * np.cos(a) / np.cos(spec.psi)
    return -scale * np.array([-np.cos(spec.psi), np.sin(spec.psi), 0.0])


def symmetric_ioffe(spec: TwoWaveSpec, h: float) -> float:
    """Ioffe field making the pseudo-potential symmetric under lattice-axis exchange."""
    if h <= 0:
        raise ValidationError("height must be positive")
    denom = np.cos(spec.psi) ** 2 * np.cos(spec.psi + spec.zeta)
    if abs(denom) < 1e-14:
        raise ValidationError("cos(psi + zeta) = 0: symmetric Ioffe field undefined")
    num = np.pi * np.cos(spec.alpha) * np.sin(2 * spec.psi + spec.zeta)
    return float(spec.amplitude / spec.d * np.exp(-spec.decay * h) * num / denom)


class TwoWaveField:
    """Field source for the analytic lattice (same interface as PeriodicField)."""

    def __init__(self, spec: TwoWaveSpec):
        self.spec = spec
        # sin(k.r) = Im exp(i k.r)
        self.k = spec.wavevectors
        self.knorm = np.full(2, spec.decay)
        self.coef = spec.weights.astype(complex)

    def _terms(self, points):
        return np.exp(1j * (points[:, :2] @ self.k.T) - np.outer(points[:, 2], self.knorm))

    def expansion_arrays(self, points, order: int = 2):
        points = np.atleast_2d(np.asarray(points, float))
        E = self._terms(points)
        fac = np.stack([1j * self.k[:, 0], 1j * self.k[:, 1], -self.knorm.astype(complex)])
        psi = np.imag(E @ self.coef)
        out = {}
        for n in range(1, order + 1):
            vals = {}
            for idx in itertools.combinations_with_replacement(range(3), n):
                c = self.coef.copy()
                for a in idx:
                    c = c * fac[a]
                vals[idx] = np.imag(E @ c)
            out[n] = _symmetrize_from(vals, n)
        return psi, out[1], out.get(2), out.get(3)

    def field(self, points) -> np.ndarray:
        return -self.expansion_arrays(points, 1)[1]

    def potential(self, points) -> np.ndarray:
        return self.expansion_arrays(points, 1)[0]

    def expansion(self, r, order: int = 2) -> FieldExpansion:
        r = np.asarray(r, float)
        psi, u, v, w = self.expansion_arrays(r[None], order)
        return FieldExpansion(r, u[0], None if v is None else v[0], None if w is None else w[0], float(psi[0]))
