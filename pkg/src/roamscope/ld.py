"""Lagrangian descriptors built from orbit parametrisations.

A periodic orbit written as the joint zero set f1 = f2 = 0 (radius profile
and radial-momentum profile) yields non-negative path integrals of |df/dt|
that vanish along the orbit and are locally minimised on its invariant
manifolds: backward integration picks out the unstable manifold, forward
the stable one. Three integrands are registered:

    inner-f1-rate  |r' - rbar'(theta) theta'|     (inner orbit, backward)
    inner-f2-rate  |p_r' - pbar'(theta) theta'|   (equivalent alternative)
    radial-rate    |r'|                           (outer orbit, forward)

The f1/f2 pair plainly produces different field values; what coincides is
where the minima sit, which is what `equivalent_integrands_check` is for.
"""

from dataclasses import dataclass

from .errors import ConfigError
from .integrate import INTEGRAND_IDS, ld_quadrature

__all__ = ["DescriptorSpec", "ld_value", "equivalent_integrands_check",
           "LD_INNER_UNSTABLE", "LD_OUTER_STABLE"]


@dataclass(frozen=True)
class DescriptorSpec:
    """Which rate to accumulate, in which time direction, for how long.

    `curve` optionally supplies the orbit parametrisation the f1/f2 rates
    refer to (default: the published inner-orbit coefficients). `integrand`
    may also be a callable rate(y) -> float >= 0 for user-supplied
    descriptors.
    """

    integrand: object = "radial-rate"
    direction: str = "forward"
    tau: float = 8.0
    curve: object = None

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.direction not in ("forward", "backward"):
            raise ConfigError("direction must be 'forward' or 'backward'")
        if not callable(self.integrand) and self.integrand not in INTEGRAND_IDS:
            raise ConfigError(
                f"unknown integrand {self.integrand!r}; expected one of "
                f"{sorted(INTEGRAND_IDS)} or a callable")

    @property
    def label(self):
        name = self.integrand if isinstance(self.integrand, str) else "user"
        return f"{name}:{self.direction}:tau={self.tau:g}"

    @classmethod
    def from_config(cls, cp, curve=None):
        if not cp.has_section("descriptor"):
            return cls(curve=curve)
        sec = cp["descriptor"]
        unknown = set(sec) - {"integrand", "direction", "tau"}
        if unknown:
            raise ConfigError(f"unknown [descriptor] key(s): {sorted(unknown)}")
        kwargs = {"curve": curve}
        if "integrand" in sec:
            kwargs["integrand"] = sec["integrand"].strip()
        if "direction" in sec:
            kwargs["direction"] = sec["direction"].strip()
        if "tau" in sec:
            try:
                kwargs["tau"] = float(sec["tau"])
            except ValueError as exc:
                raise ConfigError(f"[descriptor] tau: {exc}") from exc
        return cls(**kwargs)


# the two descriptors the manifold survey actually uses
LD_INNER_UNSTABLE = DescriptorSpec("inner-f1-rate", "backward", 6.0)
LD_OUTER_STABLE = DescriptorSpec("radial-rate", "forward", 20.0)


def ld_value(params, state, spec, settings=None):
    """Descriptor value at one initial condition; +inf on integration
    failure (the sweep sentinel)."""
    return ld_quadrature(params, state, spec.tau, spec.direction,
                         spec.integrand, curve=spec.curve, settings=settings)


def equivalent_integrands_check(params, state, tau, curve=None,
                                direction="backward", settings=None):
    """(f1-rate, f2-rate) descriptor values at the same initial condition.

    The two fields differ pointwise; their minimiser loci coincide, so
    equivalence tests compare minimum positions, not values.
    """
    v1 = ld_quadrature(params, state, tau, direction, "inner-f1-rate",
                       curve=curve, settings=settings)
    v2 = ld_quadrature(params, state, tau, direction, "inner-f2-rate",
                       curve=curve, settings=settings)
    return v1, v2
