"""Periodic orbits of the thermostatted system.

Two orbits organise the dynamics: an inner orbit skirting the potential
wells, described by a 6-term cosine series r = rbar(theta) together with an
odd degree-11 polynomial p_r = pbar(theta) on (-pi/2, pi/2] extended with
period pi, and an outer orbit at the centrifugal barrier, circular to double
precision.

The inner orbit's largest return-map multiplier is ~1e21, so single
shooting is hopeless; refinement uses multiple shooting over >= 20 segments
(per-segment amplification ~10), with the kinetic-energy level added as
extra residual rows and the overdetermined consistent system solved by
Gauss-Newton least squares. Floquet multipliers are assembled from
per-segment fundamental matrices; exploiting the half-period symmetry
theta -> theta + pi keeps the products within the range where double
precision can still resolve the near-unit pair against the dominant one.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from . import _kernels as K
from .dynamics import (PhaseState, angular_factor, kinetic_energy,
                       pi_chart_jacobian, resolve_momentum_on_constraint,
                       state_array)
from .errors import DomainError, RefinementError
from .integrate import IntegratorSettings, advance
from .model import grad_U, hess_U

__all__ = [
    "OrbitCurve", "INNER_COS_COEFFS", "INNER_POLY_COEFFS",
    "inner_rbar", "inner_rbar_prime", "inner_pbar_r",
    "outer_radius", "refine_orbit", "floquet", "monodromy_segments",
    "default_inner_curve", "default_outer_curve",
]

# Published parametrisation of the inner orbit (p_theta > 0 branch).
INNER_COS_COEFFS = np.array([
    2.78147867, 0.98235111, -0.17161848, -0.00486657, 0.01628185, -0.00393858,
])
INNER_POLY_COEFFS = np.array([
    -1.06278495, -0.42089795, 1.38849679, -1.11654771, 0.40789372, -0.05122644,
])
INNER_COS_COEFFS.flags.writeable = False
INNER_POLY_COEFFS.flags.writeable = False


def _reduce_half_pi(theta):
    t = np.asarray(theta, dtype=float) % math.pi
    t = np.where(t > math.pi / 2, t - math.pi, t)
    return t if t.ndim else float(t)


def inner_rbar(theta, coeffs=INNER_COS_COEFFS):
    """Radius of the inner orbit, cosine series in cos(2k theta)."""
    theta = np.asarray(theta, dtype=float)
    k = np.arange(6)
    out = np.cos(2.0 * np.multiply.outer(theta, k)) @ np.asarray(coeffs)
    return out if out.ndim else float(out)


def inner_rbar_prime(theta, coeffs=INNER_COS_COEFFS):
    theta = np.asarray(theta, dtype=float)
    k = np.arange(6)
    out = -np.sin(2.0 * np.multiply.outer(theta, k)) @ (2.0 * k * np.asarray(coeffs))
    return out if out.ndim else float(out)


def inner_pbar_r(theta, coeffs=INNER_POLY_COEFFS):
    """Radial momentum of the inner orbit; odd polynomial on the reduced
    angle, periodically extended with period pi."""
    t = np.asarray(_reduce_half_pi(theta), dtype=float)
    powers = np.power.outer(t, 2 * np.arange(6) + 1)
    out = powers @ np.asarray(coeffs)
    return out if out.ndim else float(out)


def inner_pbar_r_prime(theta, coeffs=INNER_POLY_COEFFS):
    t = np.asarray(_reduce_half_pi(theta), dtype=float)
    powers = np.power.outer(t, 2 * np.arange(6))
    out = powers @ ((2 * np.arange(6) + 1) * np.asarray(coeffs))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class OrbitCurve:
    """Parametrised periodic orbit.

    kind "inner": cosine-series radius + odd-polynomial radial momentum
    (stored for the p_theta > 0 branch; branch -1 mirrors them).
    kind "outer": constant radius r_out.
    `nodes` holds converged multiple-shooting states when available; they
    are in-memory only and not serialized.
    """

    kind: str
    branch: int = +1
    cos_coeffs: np.ndarray = None
    poly_coeffs: np.ndarray = None
    r_out: float = None
    period: float = None
    nodes: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("inner", "outer"):
            raise DomainError(f"unknown orbit kind {self.kind!r}")
        if self.branch not in (+1, -1):
            raise DomainError("branch must be +1 or -1")
        if self.kind == "inner":
            if self.cos_coeffs is None or self.poly_coeffs is None:
                raise DomainError("inner orbit needs both coefficient sets")
            if inner_rbar(np.linspace(0, math.pi, 181),
                          self.cos_coeffs).min() <= 0:
                raise DomainError("rbar(theta) must stay positive")
        elif self.r_out is None or self.r_out <= 0:
            raise DomainError("outer orbit needs a positive radius")

    def rbar(self, theta):
        if self.kind == "outer":
            return np.full_like(np.asarray(theta, dtype=float), self.r_out) \
                if np.ndim(theta) else self.r_out
        return inner_rbar(theta, self.cos_coeffs)

    def rbar_prime(self, theta):
        if self.kind == "outer":
            return np.zeros_like(np.asarray(theta, dtype=float)) \
                if np.ndim(theta) else 0.0
        return inner_rbar_prime(theta, self.cos_coeffs)

    def pbar_r(self, theta):
        if self.kind == "outer":
            return np.zeros_like(np.asarray(theta, dtype=float)) \
                if np.ndim(theta) else 0.0
        out = inner_pbar_r(theta, self.poly_coeffs)
        return self.branch * out

    def state_at(self, params, theta):
        """On-curve state with p_theta resolved from KE = 1/2."""
        return resolve_momentum_on_constraint(
            params, float(self.rbar(theta)), float(theta),
            p_r=float(self.pbar_r(theta)), sign=self.branch)


def default_inner_curve(branch=+1):
    return OrbitCurve("inner", branch=branch, cos_coeffs=INNER_COS_COEFFS,
                      poly_coeffs=INNER_POLY_COEFFS)


def default_outer_curve(params, branch=+1):
    r = outer_radius(params)
    g = angular_factor(params, r)
    period = 2.0 * math.pi * math.sqrt(g) / g   # theta' = G p_theta, p_theta = 1/sqrt(G)
    return OrbitCurve("outer", branch=branch, r_out=r, period=period)


def outer_radius(params, bracket=(5.0, 50.0)):
    """Radius of the circular outer orbit.

    Eliminating p_theta through the kinetic-energy constraint (p_r = 0,
    p_theta^2 = 1/G(r)) turns the stationarity of p_r into the scalar root
    problem I/(r (I + mu r^2)) = dU/dr evaluated on the symmetry axis.
    """
    mu, inertia = params.mu, params.I_CH3

    def f(r):
        u_r, _ = grad_U(params, r, 0.0)
        return inertia / (r * (inertia + mu * r * r)) - u_r

    a, b = bracket
    fa, fb = f(a), f(b)
    if fa * fb > 0:
        raise DomainError(
            f"no centrifugal barrier: no sign change of the radial "
            f"stationarity residual in [{a}, {b}]")
    r = brentq(f, a, b, xtol=1e-13, rtol=8.9e-16)
    # Newton polish to the last ulp;
    # d/dr [I/(r(I+mu r^2))] = -I (I + 3 mu r^2) / (r (I + mu r^2))^2
    for _ in range(4):
        u_rr = hess_U(params, r, 0.0)[0]
        denom = (-inertia * (inertia + 3.0 * mu * r * r)
                 / (r * (inertia + mu * r * r)) ** 2 - u_rr)
        step = f(r) / denom
        r -= step
        if abs(step) < 1e-15 * r:
            break
    return float(r)


_SHOOT_SETTINGS = IntegratorSettings(rel_tol=1e-12, abs_tol=1e-12, t_max=1e9)


def _segment_flow(params, x, h, with_stm, settings):
    if with_stm:
        y, phi, status = K.var_drive(
            x, np.eye(4), h, 1.0, params.param_array,
            settings.rel_tol, settings.abs_tol, settings.max_step, 2_000_000)
        if status != K.OK:
            raise RefinementError(
                f"variational integration failed (status {status}) from "
                f"state {x} over {h}")
        return y, phi
    traj = advance(params, x, settings, t_end=h)
    if not traj.ok:
        raise RefinementError(
            f"segment integration failed ({traj.status_name}) from {x}")
    return traj.y_end, None


def _seed_nodes(params, curve, n_segments):
    """Equal-time seed states along the curve, plus a period estimate."""
    if curve.kind == "outer":
        g = angular_factor(params, curve.r_out)
        period = 2.0 * math.pi * math.sqrt(g) / g
        thetas = np.linspace(0.0, 2.0 * math.pi, n_segments, endpoint=False)
        nodes = np.array([curve.state_at(params, th).to_array()
                          for th in curve.branch * thetas])
        return nodes, period
    # quadrature of dt = dtheta / theta' along the parametrised curve
    thetas = np.linspace(0.0, 2.0 * math.pi, 2001) * curve.branch
    thdot = np.empty_like(thetas)
    for i, th in enumerate(thetas):
        y = curve.state_at(params, th).to_array()
        thdot[i] = y[3] * angular_factor(params, y[0])
    dt_dth = 1.0 / np.abs(thdot)
    tcum = np.concatenate([
        [0.0], np.cumsum(0.5 * (dt_dth[1:] + dt_dth[:-1])
                         * np.abs(np.diff(thetas)))])
    period = float(tcum[-1])
    tj = np.arange(n_segments) * period / n_segments
    thj = np.interp(tj, tcum, thetas)
    nodes = np.array([curve.state_at(params, th).to_array() for th in thj])
    return nodes, period


def _ke_gradient(params, y):
    r, p_r, _, p_theta = y
    return np.array([
        -p_theta ** 2 / (params.mu * r ** 3),
        p_r / params.mu,
        0.0,
        p_theta * angular_factor(params, r),
    ])


def refine_orbit(params, initial, n_segments=None, settings=None,
                 max_iter=25, tol=1e-10):
    """Multiple-shooting refinement of a periodic orbit.

    Unknowns are the segment start states (the first node's angle is pinned
    as the phase condition) and the period; residuals are the 4 x m
    matching conditions over one full revolution (theta advancing by 2 pi)
    plus m kinetic-energy rows pinning the constraint level. The
    overdetermined consistent system is solved by damped Gauss-Newton with
    sensitivities from the analytic variational equations.

    Returns a new OrbitCurve with the converged period, the shooting nodes,
    and, for the inner kind, coefficient sets refit to the converged orbit.
    """
    if n_segments is None:
        # the inner orbit's instability is strongly concentrated on the arc
        # past the potential maximum; short segments keep the seed error
        # from the published fit from being amplified out of the basin
        n_segments = 144 if initial.kind == "inner" else 8
    if initial.kind == "inner" and n_segments < 20:
        raise RefinementError("inner orbit needs n_segments >= 20")
    if n_segments % 2:
        n_segments += 1
    if settings is None:
        settings = _SHOOT_SETTINGS
    m = n_segments
    nodes, period = _seed_nodes(params, initial, m)
    winding = 2.0 * math.pi * initial.branch
    theta0 = nodes[0, 2]

    last_norm = np.inf
    for iteration in range(max_iter):
        h = period / m
        ends = np.empty((m, 4))
        stms = np.empty((m, 4, 4))
        for j in range(m):
            ends[j], stms[j] = _segment_flow(params, nodes[j], h, True, settings)
        res = np.empty(5 * m)
        for j in range(m):
            target = nodes[(j + 1) % m].copy()
            if j == m - 1:
                target[2] += winding
            res[4 * j:4 * j + 4] = ends[j] - target
        for j in range(m):
            res[4 * m + j] = kinetic_energy(params, nodes[j]) - 0.5
        norm = float(np.max(np.abs(res)))
        if norm < tol:
            break
        if not math.isfinite(norm):
            raise RefinementError("shooting residual became non-finite",
                                  residuals=res.tolist())

        # unknown layout: nodes[0] minus its pinned angle (3), nodes[1..m-1]
        # (4 each), period (1)
        nun = 3 + 4 * (m - 1) + 1
        jac = np.zeros((5 * m, nun))

        def cols_of(j):
            if j == 0:
                return [0, 1, 2], [0, 1, 3]
            base = 3 + 4 * (j - 1)
            return [base, base + 1, base + 2, base + 3], [0, 1, 2, 3]

        for j in range(m):
            rows = slice(4 * j, 4 * j + 4)
            cols, sidx = cols_of(j)
            jac[rows, cols] = stms[j][:, sidx]
            jn = (j + 1) % m
            cols_n, sidx_n = cols_of(jn)
            for c, si in zip(cols_n, sidx_n):
                jac[4 * j + si, c] -= 1.0
            fend = np.empty(4)
            K.field4(ends[j], params.param_array, fend)
            jac[rows, -1] = fend / m
        for j in range(m):
            cols, sidx = cols_of(j)
            jac[4 * m + j, cols] = _ke_gradient(params, nodes[j])[sidx]

        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)

        # damped update: accept the longest step that reduces the residual
        accepted = False
        for damping in (1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125):
            trial = nodes.copy()
            trial[0, [0, 1, 3]] += damping * step[0:3]
            for j in range(1, m):
                trial[j] += damping * step[3 + 4 * (j - 1):3 + 4 * j]
            trial_period = period + damping * step[-1]
            if trial_period <= 0 or np.any(trial[:, 0] <= 0):
                continue
            ht = trial_period / m
            trial_res = np.empty(5 * m)
            tends = np.empty((m, 4))
            try:
                for j in range(m):
                    tends[j], _ = _segment_flow(params, trial[j], ht, False,
                                                settings)
            except RefinementError:
                continue
            for j in range(m):
                target = trial[(j + 1) % m].copy()
                if j == m - 1:
                    target[2] += winding
                trial_res[4 * j:4 * j + 4] = tends[j] - target
            for j in range(m):
                trial_res[4 * m + j] = kinetic_energy(params, trial[j]) - 0.5
            if float(np.max(np.abs(trial_res))) < norm:
                nodes, period = trial, trial_period
                accepted = True
                break
        if not accepted:
            raise RefinementError(
                f"Gauss-Newton stalled at residual {norm:.3e} "
                f"(iteration {iteration})",
                residuals=[float(np.max(np.abs(res[4 * j:4 * j + 4])))
                           for j in range(m)],
                condition=float(np.linalg.cond(jac)))
        last_norm = norm
    else:
        raise RefinementError(
            f"no convergence in {max_iter} iterations "
            f"(last residual {last_norm:.3e})",
            residuals=[float(np.max(np.abs(res[4 * j:4 * j + 4])))
                       for j in range(m)],
            condition=float(np.linalg.cond(jac)))

    nodes[0, 2] = theta0    # keep the pinned phase exact
    if initial.kind == "outer":
        return replace(initial, r_out=float(np.mean(nodes[:, 0])),
                       period=float(period), nodes=nodes.copy())
    cc, dd = _refit_coefficients(params, nodes, period, initial.branch,
                                 settings)
    return replace(initial, cos_coeffs=cc, poly_coeffs=dd,
                   period=float(period), nodes=nodes.copy())


def _refit_coefficients(params, nodes, period, branch, settings,
                        samples_per_segment=16):
    """Least-squares refit of the cosine/odd-polynomial parametrisation to
    the converged orbit, sampled segment-wise (one revolution of this orbit
    cannot be integrated in a single piece; error amplification would throw
    the trajectory off long before it closes)."""
    m = len(nodes)
    h = period / m
    theta = np.empty(m * samples_per_segment)
    r = np.empty_like(theta)
    p_r = np.empty_like(theta)
    ts = np.linspace(0.0, h, samples_per_segment, endpoint=False)
    for j in range(m):
        traj = advance(params, nodes[j], settings, t_end=h)
        if not traj.ok:
            raise RefinementError("refit sampling failed: " + traj.status_name)
        ys = traj.eval(ts)
        sl = slice(j * samples_per_segment, (j + 1) * samples_per_segment)
        theta[sl] = ys[:, 2]
        r[sl] = ys[:, 0]
        p_r[sl] = ys[:, 1]
    cosmat = np.cos(2.0 * np.multiply.outer(theta, np.arange(6)))
    cc, *_ = np.linalg.lstsq(cosmat, r, rcond=None)
    tred = _reduce_half_pi(theta)
    polymat = np.power.outer(tred, 2 * np.arange(6) + 1)
    dd, *_ = np.linalg.lstsq(polymat, branch * p_r, rcond=None)
    return cc, dd


def monodromy_segments(params, orbit, n_segments=None, settings=None,
                       chart="p"):
    """Per-segment fundamental matrices over one period of a refined orbit.

    chart "p" gives them in (r, p_r, theta, p_theta); chart "pi" transports
    each one into the scaled chart through the exact chart Jacobians at the
    segment endpoints (the fundamental matrices of the scaled-chart
    variational equations, computed without integrating in that chart).
    """
    if orbit.period is None or orbit.nodes is None:
        orbit = refine_orbit(params, orbit,
                             n_segments=n_segments or
                             (24 if orbit.kind == "inner" else 8))
    if settings is None:
        settings = _SHOOT_SETTINGS
    nodes = orbit.nodes
    m = len(nodes)
    h = orbit.period / m
    phis = []
    for j in range(m):
        end, phi = _segment_flow(params, nodes[j], h, True, settings)
        if chart == "pi":
            dc0 = pi_chart_jacobian(params, nodes[j])
            dc1 = pi_chart_jacobian(params, end)
            phi = dc1 @ phi @ np.linalg.inv(dc0)
        phis.append(phi)
    return phis, orbit


@dataclass(frozen=True)
class FloquetReport:
    """Multipliers plus the residuals certifying the structural deflation."""

    multipliers: np.ndarray      # 4 values, |.| descending
    flow_residual: float         # max_j |Phi_j f_j - f_{j+1}| / |f_{j+1}|
    coinvariant_residual: float  # max_j |Phi_j^T n_{j+1} - n_j| / |n_j|
    det_drift: float             # |prod det R_j - 1|, = |lam_max lam_min - 1|
    log10_lam_max_raw: float     # from the raw ordered 4x4 product


def _structural_frame(params, y):
    """(f, n, V): flow vector, conserved-quantity gradient, and an
    orthonormal transverse pair spanning ker(n) modulo f.

    n is grad of sigma = e^{-2U} (KE - 1/2), the exact first integral of
    the integrated field (the field is the scaled-chart Hamiltonian flow
    rewritten through the constraint, so it conserves e^{-2U}(KE - 1/2)
    globally, not the scaled Hamiltonian itself). Hence Phi^T n' = n
    segment-wise; together with Phi f = f' this pins the two unit
    multipliers structurally instead of asking them from an eigensolver
    that cannot see them next to the dominant one.
    """
    f = np.empty(4)
    K.field4(y, params.param_array, f)
    r, p_r, theta, p_theta = y
    u = float(np.clip(eval_U_scalar(params, r, theta), -170.0, 170.0))
    w2 = math.exp(-2.0 * u)
    ke = kinetic_energy(params, y)
    u_r, u_t = grad_U(params, r, theta)
    grad_ke = _ke_gradient(params, y)
    grad_u4 = np.array([u_r, 0.0, u_t, 0.0])
    n = w2 * (grad_ke - 2.0 * (ke - 0.5) * grad_u4)
    f_hat = f / np.linalg.norm(f)
    n_hat = n / np.linalg.norm(n)
    proj = np.eye(4) - np.outer(n_hat, n_hat)
    cand = np.column_stack([f_hat] + [proj[:, k] for k in range(4)])
    q, _ = np.linalg.qr(cand)
    return f, n, q[:, 1:3]


def eval_U_scalar(params, r, theta):
    return float(K.pot(r, theta, params.param_array))


def floquet_report(params, orbit, n_segments=None, settings=None, chart="p"):
    """Floquet multipliers of the monodromy over one full period.

    A raw ordered product of the segment fundamental matrices resolves only
    the dominant multiplier: with lam_max >> 1/eps the unit pair mandated
    by autonomy and by conservation of K drowns under eps * ||product||.
    Instead the two structural unit directions are deflated exactly and the
    remaining transverse 2x2 cycle, well conditioned segment by segment,
    yields the reciprocal pair: lam_max from the cycle product, lam_min
    from the accumulated determinant (whose drift from 1 is reported, since
    lam_max * lam_min = 1 in exact arithmetic).

    chart "pi" runs the same deflation on the scaled-chart fundamental
    matrices; the spectrum is chart-invariant, so agreement between the two
    is an end-to-end consistency check.
    """
    phis, orbit = monodromy_segments(params, orbit, n_segments, settings,
                                     chart)
    nodes = orbit.nodes
    m = len(phis)
    frames = []
    for j in range(m):
        f, n, v = _structural_frame(params, nodes[j])
        if chart == "pi":
            dc = pi_chart_jacobian(params, nodes[j])
            f = dc @ f
            n = np.linalg.solve(dc.T, n)
            n_hat = n / np.linalg.norm(n)
            proj = np.eye(4) - np.outer(n_hat, n_hat)
            cand = np.column_stack([f / np.linalg.norm(f)]
                                   + [proj[:, k] for k in range(4)])
            q, _ = np.linalg.qr(cand)
            v = q[:, 1:3]
        frames.append((f, n, v))
    frames.append(frames[0])    # the node list closes on itself

    res_flow = 0.0
    res_coin = 0.0
    log_det = 0.0
    sign_det = 1.0
    prod = np.eye(2)
    raw = np.eye(4)
    for j in range(m):
        f0, n0, v0 = frames[j]
        f1, n1, v1 = frames[j + 1]
        phi = phis[j]
        res_flow = max(res_flow, float(
            np.linalg.norm(phi @ f0 - f1) / np.linalg.norm(f1)))
        res_coin = max(res_coin, float(
            np.linalg.norm(phi.T @ n1 - n0) / np.linalg.norm(n0)))
        r2 = v1.T @ (phi @ v0)
        det = float(np.linalg.det(r2))
        log_det += math.log(abs(det))
        sign_det *= math.copysign(1.0, det)
        prod = r2 @ prod
        raw = phi @ raw
    w2 = np.linalg.eigvals(prod)
    i_max = int(np.argmax(np.abs(w2)))
    lam_max = w2[i_max]
    det_signed = sign_det * math.exp(log_det) if abs(log_det) < 700 else np.inf
    lam_min = det_signed / lam_max
    det_drift = abs(det_signed - 1.0)
    mults = np.array([lam_max, 1.0 + 0.0j, 1.0 + 0.0j, lam_min])
    mults = mults[np.argsort(-np.abs(mults))]
    with np.errstate(over="ignore"):
        raw_eigs = np.linalg.eigvals(raw)
    return FloquetReport(
        multipliers=mults,
        flow_residual=res_flow,
        coinvariant_residual=res_coin,
        det_drift=det_drift,
        log10_lam_max_raw=float(np.log10(np.max(np.abs(raw_eigs)))))


def floquet(params, orbit, n_segments=None, settings=None, chart="p"):
    """Floquet multipliers over one period, |.| descending; see
    `floquet_report` for the certification residuals."""
    return floquet_report(params, orbit, n_segments, settings,
                          chart).multipliers
