"""Scalar numeric kernels and integrator drivers.

Everything here is written as plain loops over float64 so that numba can
compile it; with ROAMSCOPE_DISABLE_JIT=1 the same functions run interpreted.
No Python objects cross these boundaries: model parameters travel as a flat
array (see `model.ModelParams.param_array`) and orbit-parametrisation
coefficients as a 12-vector (6 cosine + 6 odd-polynomial coefficients).

Parameter array layout:
    0 mu     reduced mass
    1 I      moment of inertia of the core
    2 De     dissociation energy
    3 c1     long-range exponent
    4 c2     long-range mixing
    5 re     equilibrium distance
    6 Ue     hindered-rotor barrier height
    7 a      coupling range parameter
    8..11    derived long-range coefficients A, B, C, D

Driver status codes:
    0 ok | 1 step-size underflow | 2 collision (r below R_MIN)
    3 step cap exceeded | 4 non-finite state
"""

import math

import numpy as np

from ._jit import njit, prange

# indices into the parameter array
P_MU, P_I, P_DE, P_C1, P_C2, P_RE, P_UE, P_A = 0, 1, 2, 3, 4, 5, 6, 7
P_LA, P_LB, P_LC, P_LD = 8, 9, 10, 11
NPAR = 12

R_MIN = 1e-4          # below this radius the model potential is meaningless
EXP_CLAMP = 500.0     # clamp exponent of the repulsive wall to stay finite

OK, UNDERFLOW, COLLISION, STEP_CAP, NONFINITE = 0, 1, 2, 3, 4

# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
_A61, _A62, _A63, _A64, _A65 = (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0,
                                49.0 / 176.0, -5103.0 / 18656.0)
_B1, _B3, _B4, _B5, _B6 = (35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0,
                           -2187.0 / 6784.0, 11.0 / 84.0)
# truncation-error weights (5th minus embedded 4th order)
_E1, _E3, _E4, _E5, _E6, _E7 = (71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0,
                                -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)

# quartic dense-output interpolant (Shampine's continuous extension)
DENSE_P = np.array([
    [1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0,
     -12715105075.0 / 11282082432.0],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0,
     87487479700.0 / 32700410799.0],
    [0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0,
     -10690763975.0 / 1880347072.0],
    [0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0,
     701980252875.0 / 199316789632.0],
    [0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0,
     -1453857185.0 / 822651844.0],
    [0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0,
     69997945.0 / 29380423.0],
])

# integrand selectors for the LD quadrature channel
RATE_F1, RATE_F2, RATE_RADIAL = 1, 2, 3


@njit(cache=True)
def pot(r, th, P):
    """Model potential U(r, theta)."""
    x = r / P[P_RE]
    earg = P[P_C1] * (1.0 - x)
    if earg > EXP_CLAMP:
        earg = EXP_CLAMP
    x2 = x * x
    x4 = x2 * x2
    u_long = P[P_LA] * (P[P_LB] * math.exp(earg)
                        - P[P_LC] / (x4 * x2) - P[P_LD] / x4)
    dr = r - P[P_RE]
    gauss = math.exp(-P[P_A] * dr * dr)
    return u_long + 0.5 * P[P_UE] * gauss * (1.0 - math.cos(2.0 * th))


@njit(cache=True)
def pot_grad(r, th, P):
    """(dU/dr, dU/dtheta)."""
    x = r / P[P_RE]
    earg = P[P_C1] * (1.0 - x)
    if earg > EXP_CLAMP:
        earg = EXP_CLAMP
    ex = math.exp(earg)
    x2 = x * x
    x4 = x2 * x2
    x5 = x4 * x
    du_long = P[P_LA] * (-P[P_C1] * P[P_LB] * ex
                         + 6.0 * P[P_LC] / (x5 * x2)
                         + 4.0 * P[P_LD] / x5) / P[P_RE]
    dr = r - P[P_RE]
    gauss = math.exp(-P[P_A] * dr * dr)
    one_m_cos = 1.0 - math.cos(2.0 * th)
    u_r = du_long - P[P_UE] * P[P_A] * dr * gauss * one_m_cos
    u_t = P[P_UE] * gauss * math.sin(2.0 * th)
    return u_r, u_t


@njit(cache=True)
def pot_second(r, th, P):
    """(d2U/dr2, d2U/drdtheta, d2U/dtheta2)."""
    x = r / P[P_RE]
    earg = P[P_C1] * (1.0 - x)
    if earg > EXP_CLAMP:
        earg = EXP_CLAMP
    ex = math.exp(earg)
    x2 = x * x
    x4 = x2 * x2
    x6 = x4 * x2
    d2u_long = P[P_LA] * (P[P_C1] * P[P_C1] * P[P_LB] * ex
                          - 42.0 * P[P_LC] / (x6 * x2)
                          - 20.0 * P[P_LD] / x6) / (P[P_RE] * P[P_RE])
    dr = r - P[P_RE]
    ga = P[P_A]
    gauss = math.exp(-ga * dr * dr)
    cos2t = math.cos(2.0 * th)
    sin2t = math.sin(2.0 * th)
    one_m_cos = 1.0 - cos2t
    u_rr = d2u_long + P[P_UE] * ga * (2.0 * ga * dr * dr - 1.0) * gauss * one_m_cos
    u_rt = -2.0 * ga * dr * P[P_UE] * gauss * sin2t
    u_tt = 2.0 * P[P_UE] * gauss * cos2t
    return u_rr, u_rt, u_tt


@njit(cache=True)
def gfac(r, P):
    """Angular kinetic factor 1/(mu r^2) + 1/I."""
    return 1.0 / (P[P_MU] * r * r) + 1.0 / P[P_I]


@njit(cache=True)
def kinetic(y, P):
    """Kinetic energy of a phase-space point (r, p_r, theta, p_theta)."""
    return 0.5 * y[1] * y[1] / P[P_MU] + 0.5 * y[3] * y[3] * gfac(y[0], P)


@njit(cache=True)
def field4(y, P, out):
    """Thermostatted equations of motion in (r, p_r, theta, p_theta)."""
    r, pr, th, pt = y[0], y[1], y[2], y[3]
    u_r, u_t = pot_grad(r, th, P)
    g = gfac(r, P)
    rdot = pr / P[P_MU]
    thdot = pt * g
    s = u_r * rdot + u_t * thdot
    out[0] = rdot
    out[1] = pr * s + pt * pt / (P[P_MU] * r * r * r) - u_r
    out[2] = thdot
    out[3] = pt * s - u_t


@njit(cache=True)
def jac4(y, P, out):
    """Analytic Jacobian of `field4` with respect to the state."""
    r, pr, th, pt = y[0], y[1], y[2], y[3]
    mu = P[P_MU]
    u_r, u_t = pot_grad(r, th, P)
    u_rr, u_rt, u_tt = pot_second(r, th, P)
    g = gfac(r, P)
    r3 = r * r * r
    gp = -2.0 / (mu * r3)
    rdot = pr / mu
    thdot = pt * g
    s = u_r * rdot + u_t * thdot
    s_r = u_rr * rdot + u_rt * thdot + u_t * gp * pt
    s_pr = u_r / mu
    s_th = u_rt * rdot + u_tt * thdot
    s_pt = u_t * g
    out[0, 0] = 0.0
    out[0, 1] = 1.0 / mu
    out[0, 2] = 0.0
    out[0, 3] = 0.0
    out[1, 0] = pr * s_r - 3.0 * pt * pt / (mu * r3 * r) - u_rr
    out[1, 1] = s + pr * s_pr
    out[1, 2] = pr * s_th - u_rt
    out[1, 3] = pr * s_pt + 2.0 * pt / (mu * r3)
    out[2, 0] = gp * pt
    out[2, 1] = 0.0
    out[2, 2] = 0.0
    out[2, 3] = g
    out[3, 0] = pt * s_r - u_rt
    out[3, 1] = pt * s_pr
    out[3, 2] = pt * s_th - u_tt
    out[3, 3] = s + pt * s_pt


@njit(cache=True)
def series_r(th, coeffs):
    """Cosine series sum_k coeffs[k] cos(2 k theta), k = 0..5."""
    acc = coeffs[0]
    for k in range(1, 6):
        acc += coeffs[k] * math.cos(2.0 * k * th)
    return acc


@njit(cache=True)
def series_r_prime(th, coeffs):
    acc = 0.0
    for k in range(1, 6):
        acc -= 2.0 * k * coeffs[k] * math.sin(2.0 * k * th)
    return acc


@njit(cache=True)
def reduce_half_pi(th):
    """Map theta into (-pi/2, pi/2] modulo pi."""
    t = th % math.pi
    if t > 0.5 * math.pi:
        t -= math.pi
    return t


@njit(cache=True)
def series_p(th, coeffs):
    """Odd polynomial sum_k coeffs[6+k] t^(2k+1) on the reduced angle."""
    t = reduce_half_pi(th)
    t2 = t * t
    acc = 0.0
    for k in range(5, -1, -1):
        acc = acc * t2 + coeffs[6 + k]
    return acc * t


@njit(cache=True)
def series_p_prime(th, coeffs):
    t = reduce_half_pi(th)
    t2 = t * t
    acc = 0.0
    for k in range(5, -1, -1):
        acc = acc * t2 + (2.0 * k + 1.0) * coeffs[6 + k]
    return acc


@njit(cache=True)
def rate_value(which, y, P, coeffs):
    """|df/dt| of the selected orbit-parametrisation function.

    Evaluated from the forward-time field, so the value is independent of
    the integration direction.
    """
    r, pr, th, pt = y[0], y[1], y[2], y[3]
    mu = P[P_MU]
    g = gfac(r, P)
    rdot = pr / mu
    thdot = pt * g
    if which == RATE_RADIAL:
        return abs(rdot)
    if which == RATE_F1:
        return abs(rdot - series_r_prime(th, coeffs) * thdot)
    # RATE_F2
    u_r, u_t = pot_grad(r, th, P)
    s = u_r * rdot + u_t * thdot
    prdot = pr * s + pt * pt / (mu * r * r * r) - u_r
    return abs(prdot - series_p_prime(th, coeffs) * thdot)


# state-vector sizes per integration mode
MODE_PLAIN, MODE_VAR = 0, 4


@njit(cache=True)
def deriv(mode, y, P, coeffs, sign, out):
    """Right-hand side dispatch.

    mode 0: 4-dim plain field; modes 1-3: 5-dim field + LD accumulator with
    the matching rate; mode 4: 20-dim field + fundamental-matrix columns.
    `sign` is +1 forward, -1 backward (time reflection of the field; the LD
    accumulator stays non-negative either way).
    """
    field4(y, P, out)
    if mode == MODE_PLAIN:
        for i in range(4):
            out[i] *= sign
        return
    if mode == MODE_VAR:
        J = np.empty((4, 4))
        jac4(y, P, J)
        for i in range(4):
            for j in range(4):
                acc = 0.0
                for k in range(4):
                    acc += J[i, k] * y[4 + 4 * k + j]
                out[4 + 4 * i + j] = sign * acc
        for i in range(4):
            out[i] *= sign
        return
    # LD modes: rate from the forward field, then reflect the flow part
    out[4] = rate_value(mode, y, P, coeffs)
    for i in range(4):
        out[i] *= sign


@njit(cache=True)
def _mode_dim(mode):
    if mode == MODE_PLAIN:
        return 4
    if mode == MODE_VAR:
        return 20
    return 5


@njit(cache=True)
def dopri_step(mode, y, h, n, P, coeffs, sign, K, ynew, yerr):
    """One Dormand-Prince step of size h; fills stage slopes K (7,n)."""
    ytmp = np.empty(n)
    deriv(mode, y, P, coeffs, sign, K[0])
    for i in range(n):
        ytmp[i] = y[i] + h * _A21 * K[0, i]
    deriv(mode, ytmp, P, coeffs, sign, K[1])
    for i in range(n):
        ytmp[i] = y[i] + h * (_A31 * K[0, i] + _A32 * K[1, i])
    deriv(mode, ytmp, P, coeffs, sign, K[2])
    for i in range(n):
        ytmp[i] = y[i] + h * (_A41 * K[0, i] + _A42 * K[1, i] + _A43 * K[2, i])
    deriv(mode, ytmp, P, coeffs, sign, K[3])
    for i in range(n):
        ytmp[i] = y[i] + h * (_A51 * K[0, i] + _A52 * K[1, i]
                              + _A53 * K[2, i] + _A54 * K[3, i])
    deriv(mode, ytmp, P, coeffs, sign, K[4])
    for i in range(n):
        ytmp[i] = y[i] + h * (_A61 * K[0, i] + _A62 * K[1, i] + _A63 * K[2, i]
                              + _A64 * K[3, i] + _A65 * K[4, i])
    deriv(mode, ytmp, P, coeffs, sign, K[5])
    for i in range(n):
        ynew[i] = y[i] + h * (_B1 * K[0, i] + _B3 * K[2, i] + _B4 * K[3, i]
                              + _B5 * K[4, i] + _B6 * K[5, i])
    deriv(mode, ynew, P, coeffs, sign, K[6])
    for i in range(n):
        yerr[i] = h * (_E1 * K[0, i] + _E3 * K[2, i] + _E4 * K[3, i]
                       + _E5 * K[4, i] + _E6 * K[5, i] + _E7 * K[6, i])


@njit(cache=True)
def _error_norm(y, ynew, yerr, n, rtol, atol):
    acc = 0.0
    for i in range(n):
        ay = abs(y[i])
        an = abs(ynew[i])
        sc = atol + rtol * (ay if ay > an else an)
        e = yerr[i] / sc
        acc += e * e
    return math.sqrt(acc / n)


@njit(cache=True)
def _initial_step(mode, y0, n, P, coeffs, sign, rtol, atol, hmax, t_span):
    f0 = np.empty(n)
    deriv(mode, y0, P, coeffs, sign, f0)
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y0[i])
        d0 += (y0[i] / sc) ** 2
        d1 += (f0[i] / sc) ** 2
    d0 = math.sqrt(d0 / n)
    d1 = math.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    y1 = np.empty(n)
    for i in range(n):
        y1[i] = y0[i] + h0 * f0[i]
    f1 = np.empty(n)
    deriv(mode, y1, P, coeffs, sign, f1)
    d2 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y0[i])
        d2 += ((f1[i] - f0[i]) / sc) ** 2
    d2 = math.sqrt(d2 / n) / h0
    dm = d1 if d1 > d2 else d2
    if dm <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / dm) ** 0.2
    h = min(100.0 * h0, h1)
    if h > hmax:
        h = hmax
    if h > t_span:
        h = t_span
    return h


@njit(cache=True)
def _controller(err):
    if err <= 1e-30:
        return 10.0
    fac = 0.9 * err ** -0.2
    if fac > 10.0:
        fac = 10.0
    if fac < 0.2:
        fac = 0.2
    return fac


@njit(cache=True)
def ld_drive(y0, tau, sign, which, P, coeffs, rtol, atol, hmax, max_steps):
    """Integrate the LD-augmented system to t = tau; return (ld, status).

    The accumulator starts at zero; a failed trajectory reports the value
    accumulated so far, flagged by a nonzero status.
    """
    n = 5
    y = np.empty(n)
    for i in range(4):
        y[i] = y0[i]
    y[4] = 0.0
    if tau <= 0.0:
        return 0.0, OK
    ynew = np.empty(n)
    yerr = np.empty(n)
    K = np.empty((7, n))
    t = 0.0
    h = _initial_step(which, y, n, P, coeffs, sign, rtol, atol, hmax, tau)
    steps = 0
    while t < tau:
        if steps >= max_steps:
            return y[4], STEP_CAP
        last = False
        if h >= tau - t:
            h = tau - t
            last = True
        dopri_step(which, y, h, n, P, coeffs, sign, K, ynew, yerr)
        bad = False
        for i in range(n):
            if not math.isfinite(ynew[i]):
                bad = True
        if bad:
            err = 2.0
        else:
            err = _error_norm(y, ynew, yerr, n, rtol, atol)
        steps += 1
        if err <= 1.0:
            t = tau if last else t + h
            for i in range(n):
                y[i] = ynew[i]
            if y[0] <= R_MIN:
                return y[4], COLLISION
            h *= _controller(err)
            if h > hmax:
                h = hmax
        else:
            if bad:
                h *= 0.1
            else:
                h *= _controller(err)
            if h < 1e-14 * (1.0 + t):
                return y[4], UNDERFLOW
    return y[4], OK


@njit(cache=True)
def advance_drive(y0, t_end, sign, P, rtol, atol, hmax, T, Y, K):
    """Integrate the plain field to t_end, storing nodes and stage slopes.

    T: (cap+1,), Y: (cap+1, 4), K: (cap, 7, 4) caller-allocated.
    Returns (n_steps_accepted, status). Dense output on step j covers
    [T[j], T[j+1]] via `dense_point`. Times are unsigned (backward runs
    report distance along the reflected flow).
    """
    n = 4
    coeffs = np.zeros(12)
    y = Y[0]
    for i in range(n):
        y[i] = y0[i]
    T[0] = 0.0
    cap = K.shape[0]
    if t_end <= 0.0:
        return 0, OK
    ynew = np.empty(n)
    yerr = np.empty(n)
    Kw = np.empty((7, n))
    t = 0.0
    h = _initial_step(MODE_PLAIN, y, n, P, coeffs, sign, rtol, atol, hmax, t_end)
    nacc = 0
    rejects = 0
    while t < t_end:
        if nacc >= cap:
            return nacc, STEP_CAP
        last = False
        if h >= t_end - t:
            h = t_end - t
            last = True
        dopri_step(MODE_PLAIN, y, h, n, P, coeffs, sign, Kw, ynew, yerr)
        bad = False
        for i in range(n):
            if not math.isfinite(ynew[i]):
                bad = True
        if bad:
            err = 2.0
        else:
            err = _error_norm(y, ynew, yerr, n, rtol, atol)
        if err <= 1.0:
            t = t_end if last else t + h
            T[nacc + 1] = t
            for i in range(n):
                Y[nacc + 1, i] = ynew[i]
            for js in range(7):
                for i in range(n):
                    K[nacc, js, i] = Kw[js, i]
            nacc += 1
            y = Y[nacc]
            rejects = 0
            if y[0] <= R_MIN:
                return nacc, COLLISION
            h *= _controller(err)
            if h > hmax:
                h = hmax
        else:
            rejects += 1
            if bad:
                h *= 0.1
            else:
                h *= _controller(err)
            if h < 1e-14 * (1.0 + t) or rejects > 60:
                return nacc, UNDERFLOW
    return nacc, OK


@njit(cache=True)
def dense_point(y_lo, Kj, h, s, out):
    """Evaluate the quartic interpolant at fraction s of step j."""
    s2 = s * s
    s3 = s2 * s
    s4 = s3 * s
    for i in range(out.shape[0]):
        acc = 0.0
        for js in range(7):
            w = (DENSE_P[js, 0] * s + DENSE_P[js, 1] * s2
                 + DENSE_P[js, 2] * s3 + DENSE_P[js, 3] * s4)
            acc += Kj[js, i] * w
        out[i] = y_lo[i] + h * acc


@njit(cache=True)
def var_drive(y0, phi0, t_end, sign, P, rtol, atol, hmax, max_steps):
    """Integrate state + fundamental matrix; returns (y, phi, status)."""
    n = 20
    coeffs = np.zeros(12)
    y = np.empty(n)
    for i in range(4):
        y[i] = y0[i]
    for i in range(4):
        for j in range(4):
            y[4 + 4 * i + j] = phi0[i, j]
    yout = np.empty(4)
    phiout = np.empty((4, 4))
    if t_end <= 0.0:
        for i in range(4):
            yout[i] = y[i]
        for i in range(4):
            for j in range(4):
                phiout[i, j] = y[4 + 4 * i + j]
        return yout, phiout, OK
    ynew = np.empty(n)
    yerr = np.empty(n)
    K = np.empty((7, n))
    t = 0.0
    h = _initial_step(MODE_VAR, y, n, P, coeffs, sign, rtol, atol, hmax, t_end)
    steps = 0
    status = OK
    while t < t_end:
        if steps >= max_steps:
            status = STEP_CAP
            break
        last = False
        if h >= t_end - t:
            h = t_end - t
            last = True
        dopri_step(MODE_VAR, y, h, n, P, coeffs, sign, K, ynew, yerr)
        bad = False
        for i in range(n):
            if not math.isfinite(ynew[i]):
                bad = True
        if bad:
            err = 2.0
        else:
            err = _error_norm(y, ynew, yerr, n, rtol, atol)
        steps += 1
        if err <= 1.0:
            t = t_end if last else t + h
            for i in range(n):
                y[i] = ynew[i]
            if y[0] <= R_MIN:
                status = COLLISION
                break
            h *= _controller(err)
            if h > hmax:
                h = hmax
        else:
            if bad:
                h *= 0.1
            else:
                h *= _controller(err)
            if h < 1e-14 * (1.0 + t):
                status = UNDERFLOW
                break
    for i in range(4):
        yout[i] = y[i]
    for i in range(4):
        for j in range(4):
            phiout[i, j] = y[4 + 4 * i + j]
    return yout, phiout, status


@njit(cache=True, parallel=True)
def sweep_ld(states, valid, tau, sign, which, P, coeffs, rtol, atol, hmax,
             max_steps, values, status):
    """Independent LD quadrature per grid cell; reduction by cell index."""
    ncell = states.shape[0]
    for idx in prange(ncell):
        if valid[idx]:
            ld, st = ld_drive(states[idx], tau, sign, which, P, coeffs,
                              rtol, atol, hmax, max_steps)
            if st == OK:
                values[idx] = ld
            else:
                values[idx] = np.inf
            status[idx] = st
        else:
            values[idx] = np.nan
            status[idx] = -1


@njit(cache=True)
def pot_grid(r_axis, th_axis, P, out):
    """Potential sampled on the outer product of the two axes."""
    for i in range(r_axis.shape[0]):
        for j in range(th_axis.shape[0]):
            out[i, j] = pot(r_axis[i], th_axis[j], P)
