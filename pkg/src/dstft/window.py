"""Contracted tapering windows of real-valued length.

A window of length ``theta`` is obtained from a base window of support ``L``
by contraction, ``w(x, theta) = (L / theta) * w_L(L x / theta)``, so its L1
norm does not depend on ``theta``. Two families are provided, Hann and a
truncated Gaussian (``sigma = theta / 6``), together with their analytic
partial derivatives in ``theta`` and in the offset ``x``.

All functions broadcast over ``x`` and ``theta``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

THETA_MIN = 2.0


class WindowKind(enum.Enum):
    HANN = "hann"
    GAUSSIAN = "gauss"

    @classmethod
    def parse(cls, value: "WindowKind | str") -> "WindowKind":
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        aliases = {"hann": cls.HANN, "hanning": cls.HANN, "gauss": cls.GAUSSIAN,
                   "gaussian": cls.GAUSSIAN, "truncatedgaussian": cls.GAUSSIAN}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown window kind {value!r}") from None


class Which(enum.Enum):
    VALUE = "value"
    DTHETA = "dtheta"
    DX = "dx"


class WindowDomainError(ValueError):
    """Raised when a window length falls outside ``[THETA_MIN, L]``."""


@dataclass(frozen=True)
class WindowSpec:
    """Tapering family and support.

    Parameters
    ----------
    kind : WindowKind or str
        ``"hann"`` or ``"gauss"``.
    support : int
        Base support ``L`` in samples; even and at least 4. The DFT size is
        ``L`` and the number of retained bins is ``L // 2 + 1``.
    """

    kind: WindowKind
    support: int

    def __post_init__(self):
        object.__setattr__(self, "kind", WindowKind.parse(self.kind))
        L = self.support
        if int(L) != L or L < 4 or L % 2:
            raise ValueError(f"support must be an even integer >= 4, got {L}")
        object.__setattr__(self, "support", int(L))

    @property
    def n_bins(self) -> int:
        return self.support // 2 + 1

    def offsets(self) -> np.ndarray:
        """Integer offsets ``k = -L/2+1 .. L/2`` covered by one frame."""
        half = self.support // 2
        return np.arange(-half + 1, half + 1)

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            raise WindowDomainError("window length must be finite")
        if np.any(theta < THETA_MIN) or np.any(theta > self.support):
            raise WindowDomainError(
                f"window length must lie in [{THETA_MIN}, {self.support}], "
                f"got range [{theta.min()}, {theta.max()}]"
            )
        return theta


def _apply(spec: WindowSpec, x, theta, formula):
    """Evaluate ``formula(x, theta)`` on the support ``|x| <= theta/2``, zero elsewhere."""
    theta = spec.check_theta(theta)
    x = np.asarray(x, dtype=float)
    x, theta = np.broadcast_arrays(x, theta)
    inside = np.abs(x) <= 0.5 * theta
    if x.ndim == 0:
        return float(formula(x, theta)) if inside else 0.0
    out = np.zeros(x.shape)
    out[inside] = formula(x[inside], theta[inside])
    return out


def _hann(x, theta):
    return (1.0 + np.cos(2 * np.pi * x / theta)) / (2 * theta)


def _gauss(x, theta):
    sigma = theta / 6.0
    return np.exp(-np.pi * (x / sigma) ** 2) / sigma


def _hann_dtheta(x, theta):
    phase = 2 * np.pi * x / theta
    return -(1.0 + np.cos(phase)) / (2 * theta**2) + np.pi * x * np.sin(phase) / theta**3


def _gauss_dtheta(x, theta):
    # w = (6/theta) exp(-36 pi x^2 / theta^2)
    r2 = (x / theta) ** 2
    return (6.0 / theta**2) * np.exp(-36 * np.pi * r2) * (72 * np.pi * r2 - 1.0)


def _hann_dx(x, theta):
    return -np.pi * np.sin(2 * np.pi * x / theta) / theta**2


def _gauss_dx(x, theta):
    return -(432 * np.pi * x / theta**3) * np.exp(-36 * np.pi * (x / theta) ** 2)


def eval(spec: WindowSpec, x, theta):
    """Window weight ``w(x, theta)``; exactly zero for ``|x| > theta / 2``."""
    return _apply(spec, x, theta, _hann if spec.kind is WindowKind.HANN else _gauss)


def d_theta(spec: WindowSpec, x, theta):
    """Partial derivative of :func:`eval` with respect to the window length."""
    return _apply(spec, x, theta, _hann_dtheta if spec.kind is WindowKind.HANN else _gauss_dtheta)


def d_x(spec: WindowSpec, x, theta):
    """Partial derivative of :func:`eval` with respect to the offset ``x``."""
    return _apply(spec, x, theta, _hann_dx if spec.kind is WindowKind.HANN else _gauss_dx)


_FUNCS = {Which.VALUE: eval, Which.DTHETA: d_theta, Which.DX: d_x}


def sample_frame(spec: WindowSpec, frac, theta, which: Which | str = Which.VALUE, offsets=None):
    """Discrete taper used by the numerical transform.

    Returns ``f(k - frac, theta)`` for ``k = -L/2+1 .. L/2`` where ``f`` is
    the window or one of its derivatives. ``frac`` and ``theta`` may be
    arrays; the offset axis is appended last, so ``theta`` of shape ``(M,)``
    yields an ``(M, L)`` matrix. ``offsets`` restricts ``k`` to a subset.
    """
    frac = np.asarray(frac, dtype=float)
    if np.any(frac < 0) or np.any(frac >= 1):
        raise ValueError("frac must lie in [0, 1)")
    which = Which(which)
    k = (spec.offsets() if offsets is None else np.asarray(offsets)).astype(float)
    theta = np.asarray(theta, dtype=float)
    return _FUNCS[which](spec, k - frac[..., None], theta[..., None])
