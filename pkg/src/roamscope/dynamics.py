"""Hamiltonians, the constant-kinetic-energy constraint, and the equations
of motion integrated by the rest of the package.

Two charts are used. The physical chart (r, p_r, theta, p_theta) carries the
equations of motion

    r'       = p_r / mu
    p_r'     = p_r (U_r r' + U_t th') + p_theta^2/(mu r^3) - U_r
    theta'   = p_theta (1/(mu r^2) + 1/I)
    p_theta' = p_theta (U_r r' + U_t th') - U_t

which preserve the kinetic energy KE = p_r^2/(2 mu) + p_theta^2 G(r)/2 on
the level KE = 1/2, G(r) = 1/(mu r^2) + 1/I. The scaled chart
(r, pi_r, theta, pi_theta) with pi = e^{-U} p is the one in which the flow
is Hamiltonian, with

    K = (1/2) e^{U} (pi_r^2/mu + pi_theta^2 G(r)) - (1/2) e^{-U},

and K = 0 is exactly KE = 1/2. The scaled chart is numerically extreme
(e^{|U|} spans ~40 orders of magnitude over the well), so it exists here
only for evaluation and chart-transport checks.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import DomainError, EnergyBudgetError, OverflowGuardError, ConstraintWarning
from .model import eval_U, grad_U

__all__ = [
    "PhaseState", "hamiltonian_micro", "kinetic_energy", "isokinetic_K",
    "momenta_to_pi", "pi_to_momenta", "vector_field_isokinetic",
    "jacobian_isokinetic", "resolve_momentum_on_constraint",
    "angular_factor", "pi_chart_jacobian", "CONSTRAINT_KE",
]

CONSTRAINT_KE = 0.5
_EXP_GUARD = 700.0


@dataclass(frozen=True)
class PhaseState:
    """Phase-space point (r, p_r, theta, p_theta) with a time stamp."""

    r: float
    p_r: float
    theta: float
    p_theta: float
    t: float = 0.0

    def __post_init__(self):
        if self.r <= 0:
            raise DomainError(f"radius must be positive, got {self.r}")

    def to_array(self):
        return np.array([self.r, self.p_r, self.theta, self.p_theta])

    @classmethod
    def from_array(cls, y, t=0.0):
        return cls(float(y[0]), float(y[1]), float(y[2]), float(y[3]), t=t)


def state_array(state):
    """Coerce PhaseState or length-4 array-like to an ndarray copy."""
    if isinstance(state, PhaseState):
        return state.to_array()
    y = np.asarray(state, dtype=float)
    if y.shape != (4,):
        raise DomainError(f"state must have 4 components, got shape {y.shape}")
    if y[0] <= 0:
        raise DomainError(f"radius must be positive, got {y[0]}")
    return y.copy()


def angular_factor(params, r):
    """G(r) = 1/(mu r^2) + 1/I."""
    return 1.0 / (params.mu * r * r) + 1.0 / params.I_CH3


def kinetic_energy(params, state):
    y = state_array(state)
    return 0.5 * y[1] ** 2 / params.mu + 0.5 * y[3] ** 2 * angular_factor(params, y[0])


def hamiltonian_micro(params, state):
    """Unthermostatted energy: kinetic part plus the potential."""
    y = state_array(state)
    return kinetic_energy(params, y) + eval_U(params, y[0], y[2])


def _exp_minus_U(params, r, theta):
    u = eval_U(params, r, theta)
    if abs(u) > _EXP_GUARD:
        raise OverflowGuardError(
            f"|U| = {abs(u):.3g} exceeds {_EXP_GUARD:g}; e^U leaves double range")
    return math.exp(-u), u


def isokinetic_K(params, r, pi_r, theta, pi_theta):
    """Thermostat Hamiltonian in the scaled-momentum chart."""
    if r <= 0:
        raise DomainError("radius must be positive")
    w, u = _exp_minus_U(params, r, theta)
    quad = pi_r ** 2 / params.mu + pi_theta ** 2 * angular_factor(params, r)
    return 0.5 * math.exp(u) * quad - 0.5 * w


def momenta_to_pi(params, state):
    """(pi_r, pi_theta) = e^{-U} (p_r, p_theta)."""
    y = state_array(state)
    w, _ = _exp_minus_U(params, y[0], y[2])
    return w * y[1], w * y[3]


def pi_to_momenta(params, r, theta, pi_r, pi_theta):
    """Inverse of `momenta_to_pi`."""
    if r <= 0:
        raise DomainError("radius must be positive")
    w, _ = _exp_minus_U(params, r, theta)
    return pi_r / w, pi_theta / w


def pi_chart_jacobian(params, state):
    """Jacobian of the chart map (r,p_r,theta,p_theta) -> (r,pi_r,theta,pi_theta)."""
    y = state_array(state)
    r, p_r, theta, p_theta = y
    w, _ = _exp_minus_U(params, r, theta)
    u_r, u_t = grad_U(params, r, theta)
    return np.array([
        [1.0, 0.0, 0.0, 0.0],
        [-u_r * w * p_r, w, -u_t * w * p_r, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [-u_r * w * p_theta, 0.0, -u_t * w * p_theta, w],
    ])


_CONSTRAINT_TOL = 1e-6


def _warn_off_constraint(params, y):
    ke = 0.5 * y[1] ** 2 / params.mu + 0.5 * y[3] ** 2 * angular_factor(params, y[0])
    drift = abs(ke - CONSTRAINT_KE)
    if drift > _CONSTRAINT_TOL:
        warnings.warn(
            f"state violates KE = 1/2 by {drift:.3e}; the thermostatted field "
            "is only meaningful on the constraint surface",
            ConstraintWarning, stacklevel=3)


def vector_field_isokinetic(params, state, check_constraint=True):
    """Time derivative of (r, p_r, theta, p_theta) on the constraint surface."""
    y = state_array(state)
    if check_constraint:
        _warn_off_constraint(params, y)
    out = np.empty(4)
    K.field4(y, params.param_array, out)
    return out


def jacobian_isokinetic(params, state, check_constraint=True):
    """Analytic state Jacobian of the thermostatted field."""
    y = state_array(state)
    if check_constraint:
        _warn_off_constraint(params, y)
    out = np.empty((4, 4))
    K.jac4(y, params.param_array, out)
    return out


def resolve_momentum_on_constraint(params, r, theta, p_r=None, p_theta=None,
                                   sign=1.0):
    """Complete a partial momentum assignment to a KE = 1/2 state.

    Exactly one of p_r / p_theta must be given; the other is solved from the
    constraint, taking the root with the sign of `sign` (positive sign gives
    theta' > 0 when p_theta is free, r' > 0 when p_r is free).

    Raises EnergyBudgetError when the fixed momentum already spends the
    whole kinetic budget (the grid seeding masks such cells).
    """
    if r <= 0:
        raise DomainError("radius must be positive")
    if (p_r is None) == (p_theta is None):
        raise DomainError("exactly one momentum must be fixed")
    g = angular_factor(params, r)
    s = 1.0 if sign >= 0 else -1.0
    if p_theta is None:
        residual = 1.0 - p_r ** 2 / params.mu
        if residual < 0:
            raise EnergyBudgetError(
                f"outside energy shell: |p_r| = {abs(p_r):.6g} exceeds "
                f"sqrt(mu) = {math.sqrt(params.mu):.6g}")
        p_theta = s * math.sqrt(residual / g)
    else:
        residual = 1.0 - p_theta ** 2 * g
        if residual < 0:
            raise EnergyBudgetError(
                f"outside energy shell: |p_theta| = {abs(p_theta):.6g} exceeds "
                f"{1.0 / math.sqrt(g):.6g} at r = {r:.6g}")
        p_r = s * math.sqrt(residual * params.mu)
    return PhaseState(r, p_r, theta, p_theta)
