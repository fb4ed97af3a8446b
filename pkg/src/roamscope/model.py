"""Chesnavich's CH4+ potential: evaluation, derivatives, stationary points.

The potential is a radial long-range part plus a Gaussian-windowed hindered
rotor coupling,

    U(r, theta) = U_long(r) + (Ue/2) exp(-a (r-re)^2) (1 - cos 2 theta),

    U_long(r)   = De/(c1-6) (2(3-c2) e^{c1(1-x)}
                  - (4 c2 - c1 c2 + c1) x^-6 - (c1-6) c2 x^-4),   x = r/re,

with the four-fold symmetry U(r,th) = U(r,-th) = U(r,pi-th) = U(r,pi+th).
All quantities are in (kcal/mol, u, Angstrom, rad); time is the unit derived
from these three.
"""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError, StationaryPointError, ConfigError

__all__ = [
    "ModelParams", "StationaryPoint", "eval_U", "grad_U", "hess_U",
    "reduced_mass", "stationary_points", "validate_reference_table",
    "REFERENCE_POINTS",
]

# published equilibrium rows (energy, r, theta, kind) and the acceptance
# tolerance on each energy
REFERENCE_POINTS = (
    (-47.0, 1.1, 0.0, "well", 0.1),
    (-0.63, 3.45, math.pi / 2, "saddle", 0.02),
    (8.0, 1.1, math.pi / 2, "saddle", 0.1),
    (22.27, 1.63, math.pi / 2, "maximum", 0.05),
)

_CONFIG_KEYS = ("m_H", "m_CH3", "I_CH3", "D_e", "c1", "c2", "r_e", "U_e", "a")


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the model.

    Defaults follow the original parametrisation of the ion-molecule
    potential (a = 1); the derived long-range prefactors are cached on
    first use.
    """

    m_H: float = 1.007825
    m_CH3: float = 3 * 1.007825 + 12.0
    I_CH3: float = 2.373409
    D_e: float = 47.0
    c1: float = 7.37
    c2: float = 1.61
    r_e: float = 1.1
    U_e: float = 55.0
    a: float = 1.0

    def __post_init__(self):
        for name in ("m_H", "m_CH3", "I_CH3", "D_e", "U_e", "r_e", "a"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be strictly positive")
        if self.c1 <= 6.0:
            raise DomainError("c1 must exceed 6 (denominator c1 - 6)")
        mu = self.m_CH3 * self.m_H / (self.m_CH3 + self.m_H)
        if not (0.0 < mu < self.m_H):
            raise DomainError("reduced mass must lie in (0, m_H)")
        # closed-form anchors of the potential; fails loudly if the
        # long-range algebra is ever broken
        u0 = eval_U(self, self.r_e, 0.0)
        u1 = eval_U(self, self.r_e, math.pi / 2)
        if abs(u0 + self.D_e) > 1e-9 * max(1.0, self.D_e):
            raise DomainError("potential anchor U(r_e, 0) = -D_e violated")
        if abs(u1 - (self.U_e - self.D_e)) > 1e-9 * max(1.0, self.U_e):
            raise DomainError("potential anchor U(r_e, pi/2) = U_e - D_e violated")

    @cached_property
    def mu(self):
        return self.m_CH3 * self.m_H / (self.m_CH3 + self.m_H)

    @cached_property
    def _long_range(self):
        A = self.D_e / (self.c1 - 6.0)
        B = 2.0 * (3.0 - self.c2)
        C = 4.0 * self.c2 - self.c1 * self.c2 + self.c1
        D = (self.c1 - 6.0) * self.c2
        return A, B, C, D

    @cached_property
    def param_array(self):
        """Flat float64 vector consumed by the compiled kernels."""
        A, B, C, D = self._long_range
        arr = np.array([self.mu, self.I_CH3, self.D_e, self.c1, self.c2,
                        self.r_e, self.U_e, self.a, A, B, C, D])
        arr.flags.writeable = False
        return arr

    def to_config(self, cp):
        """Write the `[model]` section into a ConfigParser."""
        cp["model"] = {k: repr(getattr(self, k)) for k in _CONFIG_KEYS}

    @classmethod
    def from_config(cls, cp):
        """Read the `[model]` section of a ConfigParser; missing keys keep
        their defaults, unknown keys are rejected."""
        if not cp.has_section("model"):
            return cls()
        section = cp["model"]
        unknown = set(section) - set(k.lower() for k in _CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown [model] key(s): {sorted(unknown)}")
        kwargs = {}
        for key in _CONFIG_KEYS:
            if key.lower() in section:
                try:
                    kwargs[key] = float(section[key.lower()])
                except ValueError as exc:
                    raise ConfigError(f"[model] {key}: {exc}") from exc
        return cls(**kwargs)


@dataclass(frozen=True)
class StationaryPoint:
    r: float
    theta: float
    energy: float
    kind: str          # well | saddle | maximum | degenerate
    grad_norm: float


def _check_r(r):
    if np.any(np.asarray(r) <= 0):
        raise DomainError("radius must be strictly positive")


def eval_U(params, r, theta):
    """Potential energy; broadcasts over array input."""
    _check_r(r)
    A, B, C, D = params._long_range
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    x = r / params.r_e
    earg = np.minimum(params.c1 * (1.0 - x), 500.0)
    u_long = A * (B * np.exp(earg) - C * x ** -6.0 - D * x ** -4.0)
    dr = r - params.r_e
    gauss = np.exp(-params.a * dr * dr)
    out = u_long + 0.5 * params.U_e * gauss * (1.0 - np.cos(2.0 * theta))
    return out if out.ndim else float(out)


def grad_U(params, r, theta):
    """(dU/dr, dU/dtheta); broadcasts over array input."""
    _check_r(r)
    A, B, C, D = params._long_range
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    x = r / params.r_e
    earg = np.minimum(params.c1 * (1.0 - x), 500.0)
    du_long = A * (-params.c1 * B * np.exp(earg)
                   + 6.0 * C * x ** -7.0 + 4.0 * D * x ** -5.0) / params.r_e
    dr = r - params.r_e
    gauss = np.exp(-params.a * dr * dr)
    one_m_cos = 1.0 - np.cos(2.0 * theta)
    u_r = du_long - params.U_e * params.a * dr * gauss * one_m_cos
    u_t = params.U_e * gauss * np.sin(2.0 * theta)
    if u_r.ndim:
        return u_r, np.broadcast_to(u_t, u_r.shape).copy() if u_t.shape != u_r.shape else u_t
    return float(u_r), float(u_t)


def hess_U(params, r, theta):
    """(d2U/dr2, d2U/drdtheta, d2U/dtheta2)."""
    _check_r(r)
    A, B, C, D = params._long_range
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    x = r / params.r_e
    earg = np.minimum(params.c1 * (1.0 - x), 500.0)
    d2u_long = A * (params.c1 ** 2 * B * np.exp(earg)
                    - 42.0 * C * x ** -8.0
                    - 20.0 * D * x ** -6.0) / params.r_e ** 2
    dr = r - params.r_e
    ga = params.a
    gauss = np.exp(-ga * dr * dr)
    cos2t = np.cos(2.0 * theta)
    sin2t = np.sin(2.0 * theta)
    u_rr = d2u_long + params.U_e * ga * (2.0 * ga * dr * dr - 1.0) * gauss * (1.0 - cos2t)
    u_rt = -2.0 * ga * dr * params.U_e * gauss * sin2t
    u_tt = 2.0 * params.U_e * gauss * cos2t
    if u_rr.ndim:
        return u_rr, u_rt, u_tt
    return float(u_rr), float(u_rt), float(u_tt)


def reduced_mass(params):
    """mu = m_CH3 m_H / (m_CH3 + m_H)."""
    return params.mu


_HESS_DEGENERATE = 1e-8


def _classify(params, r, theta):
    u_rr, u_rt, u_tt = hess_U(params, r, theta)
    eigs = np.linalg.eigvalsh(np.array([[u_rr, u_rt], [u_rt, u_tt]]))
    if np.any(np.abs(eigs) < _HESS_DEGENERATE):
        return "degenerate"
    if eigs[0] > 0:
        return "well"
    if eigs[1] < 0:
        return "maximum"
    return "saddle"


def stationary_points(params, r_range=(1.0, 8.0), grad_tol=1e-10):
    """Locate stationary points of U by damped Newton from a seed grid.

    The search is restricted to r >= 1 Angstrom: below that radius the
    model potential turns over into an unphysical repulsive-core artifact
    with additional critical structure. Results are reduced modulo the
    four-fold symmetry to theta in [0, pi/2] and sorted by energy.
    """
    seeds_r = np.linspace(r_range[0], 5.0, 17)
    seeds_t = np.array([0.0, math.pi / 4, math.pi / 2])
    found = {}
    residuals = []
    for r0 in seeds_r:
        for t0 in seeds_t:
            r, th = float(r0), float(t0)
            ok = False
            for _ in range(60):
                gr, gt = grad_U(params, r, th)
                gnorm = math.hypot(gr, gt)
                if gnorm < grad_tol:
                    ok = True
                    break
                u_rr, u_rt, u_tt = hess_U(params, r, th)
                det = u_rr * u_tt - u_rt * u_rt
                if abs(det) < 1e-14:
                    break
                dr = -(u_tt * gr - u_rt * gt) / det
                dt = -(u_rr * gt - u_rt * gr) / det
                step = math.hypot(dr, dt)
                if step > 0.4:
                    dr *= 0.4 / step
                    dt *= 0.4 / step
                r += dr
                th += dt
                if not (r_range[0] * 0.8 <= r <= r_range[1]) or not math.isfinite(r):
                    break
            if not ok:
                residuals.append((float(r0), float(t0), gnorm if math.isfinite(gnorm) else np.inf))
                continue
            if not (r_range[0] <= r <= r_range[1]):
                continue
            # fold into the fundamental domain theta in [0, pi/2]
            tf = th % math.pi
            if tf > math.pi / 2:
                tf = math.pi - tf
            key = (round(r, 6), round(tf, 6))
            if key not in found:
                gr, gt = grad_U(params, r, tf)
                found[key] = StationaryPoint(
                    r=r, theta=tf, energy=eval_U(params, r, tf),
                    kind=_classify(params, r, tf),
                    grad_norm=math.hypot(gr, gt))
    if not found:
        raise StationaryPointError(
            "no stationary point converged from any seed", residuals)
    return sorted(found.values(), key=lambda p: p.energy)


def validate_reference_table(params, points=None):
    """Compare located stationary points against the published rows.

    Returns a list of (reference_row, matched_point_or_None, deltas) and a
    boolean overall flag. Tolerances: |dr| <= 0.01, |dtheta| <= 0.01 and a
    per-row energy window.
    """
    if points is None:
        points = stationary_points(params)
    report = []
    all_ok = True
    for energy, r_ref, t_ref, kind, etol in REFERENCE_POINTS:
        best = None
        best_dist = np.inf
        for p in points:
            d = abs(p.r - r_ref) + abs(p.theta - t_ref)
            if d < best_dist:
                best, best_dist = p, d
        if best is None:
            report.append(((energy, r_ref, t_ref, kind), None, None))
            all_ok = False
            continue
        deltas = (best.r - r_ref, best.theta - t_ref, best.energy - energy)
        ok = (abs(deltas[0]) <= 0.01 and abs(deltas[1]) <= 0.01
              and abs(deltas[2]) <= etol and best.kind == kind)
        report.append(((energy, r_ref, t_ref, kind), best, deltas))
        all_ok = all_ok and ok
    return report, all_ok
