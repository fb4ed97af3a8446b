"""Adaptive Dormand-Prince 5(4) integration with dense output, section-event
location, and the extra quadrature channel used by the Lagrangian
descriptors.

Backward runs negate the vector field rather than the reported times, so
durations are always positive at this interface; callers that care about
physical time apply the direction themselves.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import _kernels as K
from .dynamics import PhaseState, state_array, angular_factor, kinetic_energy
from .errors import ConfigError, DomainError
from .sections import SectionSpec, THETA_KIND

__all__ = [
    "IntegratorSettings", "Trajectory", "SectionEvent", "advance",
    "ld_quadrature", "section_crossings", "INTEGRAND_IDS",
]

INTEGRAND_IDS = {
    "inner-f1-rate": K.RATE_F1,
    "inner-f2-rate": K.RATE_F2,
    "radial-rate": K.RATE_RADIAL,
}

_STATUS_NAMES = {
    K.OK: "ok",
    K.UNDERFLOW: "step-underflow",
    K.COLLISION: "collision",
    K.STEP_CAP: "step-cap",
    K.NONFINITE: "non-finite",
}

_DEFAULT_CAP = 1 << 14
_MAX_CAP = 1 << 19


@dataclass(frozen=True)
class IntegratorSettings:
    rel_tol: float = 1e-12
    abs_tol: float = 1e-12
    max_step: float = np.inf
    t_max: float = 30.0
    direction: str = "forward"

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol"):
            v = getattr(self, name)
            if not (0.0 < v <= 1e-3):
                raise ConfigError(f"{name} must lie in (0, 1e-3], got {v}")
        if self.t_max <= 0:
            raise ConfigError("t_max must be positive")
        if self.max_step <= 0:
            raise ConfigError("max_step must be positive")
        if self.direction not in ("forward", "backward"):
            raise ConfigError("direction must be 'forward' or 'backward'")

    @property
    def sign(self):
        return 1.0 if self.direction == "forward" else -1.0

    @classmethod
    def from_config(cls, cp):
        if not cp.has_section("integrator"):
            return cls()
        sec = cp["integrator"]
        known = {"rel_tol", "abs_tol", "max_step", "t_max", "direction"}
        unknown = set(sec) - known
        if unknown:
            raise ConfigError(f"unknown [integrator] key(s): {sorted(unknown)}")
        kwargs = {}
        for key in known:
            if key in sec:
                if key == "direction":
                    kwargs[key] = sec[key].strip()
                else:
                    try:
                        kwargs[key] = float(sec[key])
                    except ValueError as exc:
                        raise ConfigError(f"[integrator] {key}: {exc}") from exc
        return cls(**kwargs)


GRID_SETTINGS = IntegratorSettings(rel_tol=1e-10, abs_tol=1e-10)


class Trajectory:
    """Accepted-step record of one integration, with dense output.

    Attributes: `t` node times (unsigned), `y` node states, `status`
    (see `_kernels` status codes), `sign` (+1 forward / -1 backward).
    """

    def __init__(self, t, y, stages, sign, status):
        self.t = t
        self.y = y
        self._stages = stages
        self.sign = sign
        self.status = status

    @property
    def ok(self):
        return self.status == K.OK

    @property
    def status_name(self):
        return _STATUS_NAMES.get(self.status, str(self.status))

    @property
    def t_end(self):
        return self.t[-1]

    @property
    def y_end(self):
        return self.y[-1]

    def end_state(self):
        return PhaseState.from_array(self.y[-1], t=self.sign * self.t[-1])

    def __len__(self):
        return len(self.t)

    def eval(self, t):
        """Dense evaluation at unsigned time(s) in [0, t_end]."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tq = np.atleast_1d(t)
        if np.any(tq < -1e-12) or np.any(tq > self.t[-1] * (1 + 1e-12) + 1e-30):
            raise DomainError("dense evaluation outside the integrated span")
        tq = np.clip(tq, 0.0, self.t[-1])
        idx = np.clip(np.searchsorted(self.t, tq, side="right") - 1, 0,
                      len(self.t) - 2)
        h = self.t[idx + 1] - self.t[idx]
        s = np.where(h > 0, (tq - self.t[idx]) / np.where(h > 0, h, 1.0), 0.0)
        sp = np.stack([s, s ** 2, s ** 3, s ** 4], axis=-1)      # (m, 4)
        w = sp @ K.DENSE_P.T                                     # (m, 7)
        out = self.y[idx] + h[:, None] * np.einsum(
            "mj,mji->mi", w, self._stages[idx])
        return out[0] if scalar else out

    def ke_drift(self, params):
        """max |KE - 1/2| over the stored nodes."""
        ke = (0.5 * self.y[:, 1] ** 2 / params.mu
              + 0.5 * self.y[:, 3] ** 2 * (1.0 / (params.mu * self.y[:, 0] ** 2)
                                           + 1.0 / params.I_CH3))
        return float(np.max(np.abs(ke - 0.5)))


def advance(params, state, settings=None, t_end=None):
    """Integrate the thermostatted field from `state` for `t_end` time units
    (defaults to settings.t_max), direction taken from the settings.

    Always returns a Trajectory; failures (step underflow near the
    repulsive core, collision, step cap) truncate it and set `status`.
    """
    if settings is None:
        settings = IntegratorSettings()
    y0 = state_array(state)
    span = float(settings.t_max if t_end is None else t_end)
    if span < 0:
        raise DomainError("t_end must be non-negative")
    cap = _DEFAULT_CAP
    while True:
        t_nodes = np.empty(cap + 1)
        y_nodes = np.empty((cap + 1, 4))
        stages = np.empty((cap, 7, 4))
        nacc, status = K.advance_drive(
            y0, span, settings.sign, params.param_array,
            settings.rel_tol, settings.abs_tol, settings.max_step,
            t_nodes, y_nodes, stages)
        if status == K.STEP_CAP and cap < _MAX_CAP:
            cap *= 4
            continue
        break
    n = max(nacc, 0)
    return Trajectory(t_nodes[:n + 1].copy(), y_nodes[:n + 1].copy(),
                      stages[:n].copy(), settings.sign, status)


def _coeffs_vector(curve):
    """12-vector of parametrisation coefficients for the rate kernels."""
    from .orbits import OrbitCurve, INNER_COS_COEFFS, INNER_POLY_COEFFS
    if curve is None:
        return np.concatenate([INNER_COS_COEFFS, INNER_POLY_COEFFS])
    if isinstance(curve, OrbitCurve):
        cc = curve.cos_coeffs if curve.cos_coeffs is not None else INNER_COS_COEFFS
        dd = curve.poly_coeffs if curve.poly_coeffs is not None else INNER_POLY_COEFFS
        if curve.branch < 0:
            dd = -np.asarray(dd)
        return np.concatenate([np.asarray(cc, dtype=float),
                               np.asarray(dd, dtype=float)])
    arr = np.asarray(curve, dtype=float)
    if arr.shape != (12,):
        raise ConfigError("coefficient vector must have 12 entries")
    return arr


def ld_quadrature(params, state, tau, direction="forward",
                  integrand="radial-rate", curve=None, settings=None,
                  max_steps=200_000):
    """Accumulated |rate| along the trajectory over duration tau.

    `integrand` is one of the registered rate names or a callable
    `rate(y) -> float >= 0` evaluated on the forward-time field (callables
    use per-step dense quadrature instead of the compiled channel).
    Integration failures return +inf: the sentinel renders as a masked-out
    maximal cell rather than aborting a sweep.
    """
    if tau < 0:
        raise DomainError("tau must be non-negative")
    if tau == 0.0:
        return 0.0
    if settings is None:
        settings = GRID_SETTINGS
    sign = 1.0 if direction == "forward" else -1.0
    y0 = state_array(state)
    if callable(integrand):
        return _ld_dense_quadrature(params, y0, tau, sign, integrand, settings)
    try:
        which = INTEGRAND_IDS[integrand]
    except KeyError:
        raise ConfigError(
            f"unknown integrand {integrand!r}; expected one of "
            f"{sorted(INTEGRAND_IDS)} or a callable") from None
    coeffs = _coeffs_vector(curve)
    value, status = K.ld_drive(y0, tau, sign, which, params.param_array,
                               coeffs, settings.rel_tol, settings.abs_tol,
                               settings.max_step, max_steps)
    if status != K.OK:
        return math.inf
    return float(value)


# 5-point Gauss-Legendre nodes/weights on [0, 1]
_GL_X = (np.polynomial.legendre.leggauss(5)[0] + 1.0) / 2.0
_GL_W = np.polynomial.legendre.leggauss(5)[1] / 2.0


def _ld_dense_quadrature(params, y0, tau, sign, rate, settings):
    eff = IntegratorSettings(settings.rel_tol, settings.abs_tol,
                             settings.max_step, tau,
                             "forward" if sign > 0 else "backward")
    traj = advance(params, y0, eff)
    if not traj.ok:
        return math.inf
    total = 0.0
    for j in range(len(traj.t) - 1):
        h = traj.t[j + 1] - traj.t[j]
        if h <= 0:
            continue
        ts = traj.t[j] + h * _GL_X
        ys = traj.eval(ts)
        total += h * sum(w * abs(rate(y)) for w, y in zip(_GL_W, ys))
    return total


@dataclass(frozen=True)
class SectionEvent:
    state: PhaseState
    index: int
    residual: float
    grazing: bool = False


def _wrap_angle(d):
    return (d + math.pi) % (2.0 * math.pi) - math.pi


def _section_g(section, y):
    """Signed distance to the section; y may be (4,) or (n, 4)."""
    y = np.asarray(y)
    if section.kind == THETA_KIND:
        d = y[..., 2] - section.value
        return _wrap_angle(d) if np.ndim(d) else _wrap_angle(float(d))
    return y[..., 0] - section.value


def _section_gdot(params, section, y):
    if section.kind == THETA_KIND:
        return y[3] * angular_factor(params, y[0])
    return y[1] / params.mu


_GRAZING_TOL = 1e-8
_EVENT_TOL = 1e-10


def crossings_on_trajectory(params, traj, section, direction=+1, limit=None):
    """Locate section crossings on an already-integrated trajectory.

    direction +1 keeps g' > 0 crossings, -1 keeps g' < 0, 0 keeps both.
    Crossings are reported strictly inside (0, t_end]; a start exactly on
    the section is not an event. Near-tangential crossings (|g'| below
    1e-8) are flagged grazing.
    """
    g = _section_g(section, traj.y)
    if section.kind == THETA_KIND:
        near = np.abs(g) < math.pi / 2
    else:
        near = np.ones_like(g, dtype=bool)
    events = []
    for j in range(len(g) - 1):
        if not (near[j] and near[j + 1]):
            continue
        ga, gb = g[j], g[j + 1]
        if ga == 0.0 and traj.t[j] == 0.0:
            continue        # open-interval convention at the start
        if ga * gb > 0.0 or (ga == 0.0 and gb == 0.0):
            continue
        if gb == 0.0 and ga != 0.0:
            t_cross = traj.t[j + 1]
        elif ga == 0.0:
            continue        # node exactly on section; counted at step j-1
        else:
            f = lambda tt: float(_section_g(section, traj.eval(tt)))
            t_cross = brentq(f, traj.t[j], traj.t[j + 1],
                             xtol=1e-14, rtol=8.9e-16)
        y_cross = traj.eval(t_cross)
        gd = _section_gdot(params, section, y_cross) * traj.sign
        if direction != 0 and gd * direction <= 0.0:
            continue
        if t_cross <= 1e-12:
            continue
        events.append(SectionEvent(
            state=PhaseState.from_array(y_cross, t=traj.sign * t_cross),
            index=len(events),
            residual=abs(float(_section_g(section, y_cross))),
            grazing=abs(gd) < _GRAZING_TOL))
        if limit is not None and len(events) >= limit:
            break
    return events


def section_crossings(params, state, section, settings=None, t_end=None):
    """Integrate from `state` and return all crossings of the section in its
    defining direction (theta' > 0 or r' > 0) within (0, t_max]."""
    if not isinstance(section, SectionSpec):
        raise ConfigError("section must be a SectionSpec")
    if settings is None:
        settings = IntegratorSettings()
    traj = advance(params, state, settings, t_end=t_end)
    return crossings_on_trajectory(params, traj, section, direction=+1)
