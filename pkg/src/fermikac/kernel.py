"""Collision geometry and cross-section evaluation.

Velocities are plain numpy arrays of shape (3,), or (..., 3) for batched
calls.  The elastic pair transform exchanges the component of the relative
velocity along a unit scattering vector omega; it conserves momentum,
kinetic energy and the relative speed exactly (up to rounding).
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError

UNIT_TOL = 1e-12

SMOOTH_RAMP = "smooth_ramp"
CUSTOM = "custom"


def collide(v_i, v_j, omega):
    """Elastic pair collision with scattering vector omega.

    v'_i = v_i - omega [(v_i - v_j) . omega]
    v'_j = v_j + omega [(v_i - v_j) . omega]

    Accepts single vectors of shape (3,) or batches of shape (..., 3).
    omega must be unit length (checked to 1e-12 on single vectors).
    """
    v_i = np.asarray(v_i, dtype=np.float64)
    v_j = np.asarray(v_j, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    if omega.ndim == 1 and abs(omega @ omega - 1.0) > 64 * UNIT_TOL:
        raise ValueError("omega must be a unit vector")
    proj = np.sum((v_i - v_j) * omega, axis=-1, keepdims=True)
    return v_i - omega * proj, v_j + omega * proj


@dataclass
class CrossSectionSpec:
    """Bounded, compactly supported collision kernel B(v; omega).

    b0 is the sup bound, m_cut the cutoff radius: B vanishes for
    |v| > m_cut and 0 <= B <= b0 everywhere.  The default smooth_ramp
    form is b0 * max(0, 1 - |v|/m_cut), continuous and omega-independent.
    A custom form may depend on omega; it must still respect the bound
    and the cutoff (the majorant event loop relies on both).
    """

    b0: float = 1.0
    m_cut: float = 1.5
    form: str = SMOOTH_RAMP
    custom_fn: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        if self.b0 < 0:
            raise ConfigError("kernel.b0 must be >= 0")
        if self.m_cut <= 0:
            raise ConfigError("kernel.m_cut must be > 0")
        if self.form not in (SMOOTH_RAMP, CUSTOM):
            raise ConfigError(f"unknown kernel form {self.form!r}")
        if self.form == CUSTOM and self.custom_fn is None:
            raise ConfigError("custom kernel requires custom_fn")

    def eval_speed(self, speed):
        """B as a function of |v_rel| for omega-independent forms."""
        speed = np.asarray(speed, dtype=np.float64)
        if self.form == SMOOTH_RAMP:
            return self.b0 * np.maximum(0.0, 1.0 - speed / self.m_cut)
        raise ConfigError("custom kernels need the full eval_kernel call")

    @property
    def omega_independent(self):
        return self.form == SMOOTH_RAMP


def eval_kernel(spec: CrossSectionSpec, v_rel, omega=None):
    """Evaluate B(v_rel; omega).

    v_rel may be (3,) or (..., 3).  omega is ignored by the smooth_ramp
    form.  Custom kernels receive (speed, omega) and are clipped to
    [0, b0] and to zero beyond m_cut so the declared bounds always hold.
    """
    v_rel = np.asarray(v_rel, dtype=np.float64)
    speed = np.sqrt(np.sum(v_rel * v_rel, axis=-1))
    if spec.form == SMOOTH_RAMP:
        return spec.b0 * np.maximum(0.0, 1.0 - speed / spec.m_cut)
    raw = spec.custom_fn(speed, omega)
    return np.where(speed > spec.m_cut, 0.0, np.clip(raw, 0.0, spec.b0))


def sample_omega(rng, n=None):
    """Uniform unit vector(s) on the sphere; renormalized gaussians.

    Returns shape (3,) for n=None, else (n, 3).
    """
    w = rng.standard_normal((1 if n is None else n, 3))
    norm = np.sqrt(np.sum(w * w, axis=-1, keepdims=True))
    # a zero draw has probability ~0; redraw defensively
    while np.any(norm == 0.0):
        bad = norm[:, 0] == 0.0
        w[bad] = rng.standard_normal((int(np.sum(bad)), 3))
        norm = np.sqrt(np.sum(w * w, axis=-1, keepdims=True))
    out = w / norm
    return out[0] if n is None else out
