"""Section grids, descriptor fields, manifold extraction, trajectory
classification, and the manifold-intersection overlay.

Field conventions: `values[i, j]` is the descriptor at axis1 node i, axis2
node j of the section grid; NaN marks cells outside the kinetic-energy
budget, +inf cells whose trajectory failed. Serial and threaded sweeps
write per-cell results by index, so outputs are identical regardless of
worker count.
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from . import _kernels as K
from ._jit import set_threads, JIT_ENABLED
from .dynamics import PhaseState, angular_factor, state_array
from .errors import ExtractionError, ConfigError
from .integrate import (GRID_SETTINGS, IntegratorSettings, advance,
                        crossings_on_trajectory, _coeffs_vector,
                        _ld_dense_quadrature, INTEGRAND_IDS)
from .orbits import default_inner_curve, outer_radius
from .sections import SectionSpec, RADIAL_KIND, THETA_KIND

__all__ = [
    "LDField", "ManifoldTrace", "ClassifyRules", "TrajectoryClass",
    "OverlayReport", "seed_grid", "compute_field", "extract_minima",
    "extract_gradient_ridges", "classify_trajectory", "classify_grid",
    "intersection_overlay",
    "LABEL_WIU", "LABEL_WOS", "LABEL_AXIS",
    "CLASS_DIRECT", "CLASS_ROAMING", "CLASS_ISOMERISING",
    "CLASS_NONREACTIVE", "CLASS_TIMEOUT",
]

LABEL_WIU = "W_i^u"
LABEL_WOS = "W_o^s"
LABEL_AXIS = "axis-asymptotic"

CLASS_DIRECT = "direct-dissociation"
CLASS_ROAMING = "roaming"
CLASS_ISOMERISING = "isomerising"
CLASS_NONREACTIVE = "nonreactive"
CLASS_TIMEOUT = "resident-timeout"

CLASS_CODES = {
    CLASS_DIRECT: 1,
    CLASS_ROAMING: 2,
    CLASS_ISOMERISING: 3,
    CLASS_NONREACTIVE: 4,
    CLASS_TIMEOUT: 5,
}


@dataclass
class LDField:
    """Descriptor values over a section grid plus everything needed to
    reproduce them."""

    section: SectionSpec
    integrand: str
    direction: str
    tau: float
    rel_tol: float
    abs_tol: float
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def mask(self):
        """True where the cell is outside the kinetic-energy budget."""
        return np.isnan(self.values)

    @property
    def failed(self):
        return np.isinf(self.values)

    @property
    def finite_values(self):
        return self.values[np.isfinite(self.values)]


@dataclass
class ManifoldTrace:
    """Labeled point set extracted from a descriptor field."""

    label: str
    points: np.ndarray          # (k, 2) physical section coordinates
    chain_ids: np.ndarray       # (k,)
    section: SectionSpec
    meta: dict = field(default_factory=dict)
    companions: list = field(default_factory=list)

    @property
    def n_chains(self):
        return len(np.unique(self.chain_ids)) if len(self.chain_ids) else 0

    def chain(self, cid):
        return self.points[self.chain_ids == cid]


def seed_grid(params, section):
    """Constrained initial states for every grid cell.

    Returns (states, valid) with states of shape (n*n, 4) in row-major
    (axis1, axis2) order. Infeasible cells (fixed momentum over budget)
    carry valid=False and are data, not errors.
    """
    a1, a2 = section.axes()
    n1, n2 = len(a1), len(a2)
    states = np.zeros((n1 * n2, 4))
    if section.kind == THETA_KIND:
        r = np.repeat(a1, n2)
        p_r = np.tile(a2, n1)
        residual = 1.0 - p_r ** 2 / params.mu
        valid = residual >= 0.0
        g = 1.0 / (params.mu * r * r) + 1.0 / params.I_CH3
        p_t = np.sqrt(np.where(valid, residual, 0.0) / g)
        states[:, 0] = r
        states[:, 1] = p_r
        states[:, 2] = section.value
        states[:, 3] = p_t                      # theta' > 0 branch
    else:
        theta = np.repeat(a1, n2)
        p_t = np.tile(a2, n1)
        g = angular_factor(params, section.value)
        residual = 1.0 - p_t ** 2 * g
        valid = residual >= 0.0
        states[:, 0] = section.value
        states[:, 1] = np.sqrt(np.where(valid, residual, 0.0) * params.mu)
        states[:, 2] = theta
        states[:, 3] = p_t                      # r' > 0 branch
    return states, valid


def compute_field(params, section, descriptor, settings=None, threads=None):
    """Descriptor value per unmasked grid cell.

    Cells are independent; the compiled sweep runs them in parallel and
    reduces by cell index, so the result is identical for any thread count.
    """
    if settings is None:
        settings = GRID_SETTINGS
    states, valid = seed_grid(params, section)
    n = section.resolution
    sign = 1.0 if descriptor.direction == "forward" else -1.0
    if callable(descriptor.integrand):
        values = np.empty(len(states))
        for idx in range(len(states)):
            if valid[idx]:
                values[idx] = _ld_dense_quadrature(
                    params, states[idx], descriptor.tau, sign,
                    descriptor.integrand, settings)
            else:
                values[idx] = np.nan
        integrand_name = "user"
    else:
        which = INTEGRAND_IDS[descriptor.integrand]
        coeffs = _coeffs_vector(descriptor.curve)
        values = np.empty(len(states))
        status = np.empty(len(states), dtype=np.int64)
        set_threads(threads)
        K.sweep_ld(states, valid, descriptor.tau, sign, which,
                   params.param_array, coeffs, settings.rel_tol,
                   settings.abs_tol, settings.max_step, 200_000,
                   values, status)
        integrand_name = descriptor.integrand
    values = values.reshape(n, n)
    n_masked = int(np.isnan(values).sum())
    n_failed = int(np.isinf(values).sum())
    return LDField(
        section=section, integrand=integrand_name,
        direction=descriptor.direction, tau=descriptor.tau,
        rel_tol=settings.rel_tol, abs_tol=settings.abs_tol, values=values,
        meta={"masked_cells": n_masked, "failed_cells": n_failed,
              "jit": JIT_ENABLED})


def _line_minima(v, prominence):
    """Strict interior local minima of one scan line below the prominence
    cutoff; returns (indices, refined positions)."""
    finite = np.isfinite(v)
    if finite.sum() < 3:
        return [], []
    vmin = np.min(v[finite])
    vmax = np.max(v[finite])
    cutoff = vmin + prominence * (vmax - vmin)
    idx, pos = [], []
    for j in range(1, len(v) - 1):
        if not (finite[j - 1] and finite[j] and finite[j + 1]):
            continue
        if v[j] < v[j - 1] and v[j] < v[j + 1] and v[j] <= cutoff:
            denom = v[j - 1] - 2.0 * v[j] + v[j + 1]
            off = 0.5 * (v[j - 1] - v[j + 1]) / denom if denom > 0 else 0.0
            idx.append(j)
            pos.append(j + float(np.clip(off, -0.5, 0.5)))
    return idx, pos


def extract_minima(field, scan_axis=1, prominence=0.25, min_relief=1e-9):
    """Per-line descriptor minima chained into manifold traces.

    Scans each grid line along `scan_axis` (default: the momentum axis) for
    strict interior local minima below the prominence cutoff, keeps the
    deepest one per sign of the scanned coordinate, and chains the results
    into one trace per sign. Designed for the forward radial-rate field,
    whose minima mark the stable manifold of the outer orbit.
    """
    if scan_axis not in (0, 1):
        raise ConfigError("scan_axis must be 0 or 1")
    a1, a2 = field.section.axes()
    vals = field.values if scan_axis == 1 else field.values.T
    line_coord = a1 if scan_axis == 1 else a2
    scan_coord = a2 if scan_axis == 1 else a1
    d_scan = scan_coord[1] - scan_coord[0]
    relief_floor = min_relief * max(
        1e-300, float(np.ptp(field.finite_values)) if field.finite_values.size else 0.0)
    pts, cids = [], []
    for i in range(vals.shape[0]):
        line = vals[i]
        finite = np.isfinite(line)
        if finite.sum() < 3 or np.ptp(line[finite]) <= relief_floor:
            continue
        idx, pos = _line_minima(line, prominence)
        best = {}
        for j, p in zip(idx, pos):
            s = 1 if scan_coord[j] >= 0 else -1
            if s not in best or line[j] < line[best[s][0]]:
                best[s] = (j, p)
        for s, (j, p) in best.items():
            c_scan = scan_coord[0] + p * d_scan
            if scan_axis == 1:
                pts.append((line_coord[i], c_scan))
            else:
                pts.append((c_scan, line_coord[i]))
            cids.append(0 if s > 0 else 1)
    if not pts:
        raise ExtractionError(
            "no interior minima found on any scan line (empty trace)")
    return ManifoldTrace(
        label=LABEL_WOS, points=np.array(pts), chain_ids=np.array(cids),
        section=field.section,
        meta={"method": "line-minima", "scan_axis": scan_axis,
              "prominence": prominence, "tau": field.tau,
              "integrand": field.integrand, "direction": field.direction})


def _link_chains(rows, positions, jump_tol, row_gap=2):
    """Greedy nearest-neighbor linking of per-row ridge candidates.

    rows/positions: parallel flat lists (row index, fractional column).
    Returns list of chains, each a list of (row, pos).
    """
    from collections import defaultdict
    per_row = defaultdict(list)
    for r, p in zip(rows, positions):
        per_row[r].append(p)
    chains = []          # each: {"pts": [(row, pos)], "open": bool}
    for r in sorted(per_row):
        candidates = sorted(per_row[r])
        claimed = [False] * len(candidates)
        # extend existing chains first, nearest candidate within tolerance
        for ch in chains:
            if not ch["open"]:
                continue
            last_r, last_p = ch["pts"][-1]
            if r - last_r > row_gap + 1:
                ch["open"] = False
                continue
            best_k, best_d = -1, np.inf
            for k, p in enumerate(candidates):
                if claimed[k]:
                    continue
                d = abs(p - last_p)
                if d < best_d:
                    best_k, best_d = k, d
            if best_k >= 0 and best_d <= jump_tol * (r - last_r):
                ch["pts"].append((r, candidates[best_k]))
                claimed[best_k] = True
        for k, p in enumerate(candidates):
            if not claimed[k]:
                chains.append({"pts": [(r, p)], "open": True})
    return [ch["pts"] for ch in chains]


def extract_gradient_ridges(field, cutoff_fraction=0.5, jump_tol=3.0,
                            min_len=10, floor_fraction=0.05):
    """Ridges of the first-difference magnitude along axis1, per scan line
    of constant axis2, chained across lines.

    The descriptor is clamped above cutoff = min + cutoff_fraction * range
    before differencing; the manifold shows up as a steep wall in the raw
    field, and the clamp removes far-field texture that would otherwise
    bury the wall's gradient signature. Chains spanning most of the
    momentum range are labeled as the unstable-manifold S-curves; short
    near-vertical leftovers pointing at the symmetry axes are labeled
    axis-asymptotic and attached as companions.
    """
    a1, a2 = field.section.axes()
    v = field.values.copy()
    finite = np.isfinite(v)
    if finite.sum() < 9:
        raise ExtractionError("field has too few finite cells")
    vmin = float(v[finite].min())
    vmax = float(v[finite].max())
    cutoff = vmin + cutoff_fraction * (vmax - vmin)
    v[~finite] = cutoff
    np.minimum(v, cutoff, out=v)

    d = np.abs(np.diff(v, axis=0))            # (n1-1, n2)
    dmax = float(d.max())
    if dmax <= 0:
        raise ExtractionError("flat field: no gradient ridges")
    floor = floor_fraction * dmax
    rows_list, pos_list = [], []
    valid_rows = 0
    for j in range(d.shape[1]):
        col = d[:, j]
        if not np.any(col > floor):
            continue
        valid_rows += 1
        for i in range(1, len(col) - 1):
            if col[i] > col[i - 1] and col[i] > col[i + 1] and col[i] > floor:
                denom = col[i - 1] - 2.0 * col[i] + col[i + 1]
                off = 0.5 * (col[i - 1] - col[i + 1]) / denom if denom < 0 else 0.0
                rows_list.append(j)
                pos_list.append(i + 0.5 + float(np.clip(off, -0.5, 0.5)))
    chains = [c for c in _link_chains(rows_list, pos_list, jump_tol)
              if len(c) >= min_len]
    if not chains:
        raise ExtractionError("no ridge chains of the required length")

    n_rows_total = d.shape[1]
    span_needed = 0.6 * max(valid_rows, 1)
    d1 = a1[1] - a1[0]
    s_pts, s_ids, ax_pts, ax_ids = [], [], [], []
    s_count = 0
    ax_count = 0
    for pts in sorted(chains, key=lambda c: -len(c)):
        rows = [r for r, _ in pts]
        span = max(rows) - min(rows) + 1
        coords = [(a1[0] + p * d1, a2[r]) for r, p in pts]
        if span >= span_needed:
            s_pts.extend(coords)
            s_ids.extend([s_count] * len(coords))
            s_count += 1
        else:
            ax_pts.extend(coords)
            ax_ids.extend([ax_count] * len(coords))
            ax_count += 1
    if s_count != 4:
        warnings.warn(
            f"expected 4 unstable-manifold chains, found {s_count} "
            f"(+{ax_count} short); chain census: "
            f"{sorted((len(c) for c in chains), reverse=True)}",
            stacklevel=2)
    meta = {"method": "gradient-ridges", "cutoff_fraction": cutoff_fraction,
            "cutoff": cutoff, "jump_tol": jump_tol, "min_len": min_len,
            "tau": field.tau, "integrand": field.integrand,
            "direction": field.direction}
    companions = []
    if ax_pts:
        companions.append(ManifoldTrace(
            label=LABEL_AXIS, points=np.array(ax_pts),
            chain_ids=np.array(ax_ids), section=field.section,
            meta=dict(meta)))
    if not s_pts:
        raise ExtractionError(
            f"no chain spans the momentum range (census "
            f"{sorted((len(c) for c in chains), reverse=True)})")
    return ManifoldTrace(
        label=LABEL_WIU, points=np.array(s_pts), chain_ids=np.array(s_ids),
        section=field.section, meta=meta, companions=companions)


@dataclass(frozen=True)
class ClassifyRules:
    """Event rules mapping a forward trajectory to a dynamics class.

    The crossing count of the r = section_radius surface (both directions,
    including the seed's own outward crossing when it starts on the
    surface) since last leaving the potential-well region r < rbar(theta)
    decides between direct dissociation and roaming; entering the well
    region is terminal (isomerising). This transplants dividing-surface
    crossing-count semantics onto the thermostatted flow and is isolated
    here so alternative readings stay one dataclass away.
    """

    t_max: float = 150.0
    section_radius: float = 3.6
    dissociation_radius: float = None        # resolved to r_out when None
    count_initial: bool = True
    curve: object = None                     # well boundary; printed inner curve when None

    def resolve(self, params):
        rd = self.dissociation_radius
        curve = self.curve
        if rd is None:
            rd = outer_radius(params)
        if curve is None:
            curve = default_inner_curve()
        return replace(self, dissociation_radius=rd, curve=curve)


@dataclass(frozen=True)
class TrajectoryClass:
    label: str
    crossings: int
    t_final: float
    had_well_contact: bool
    failed: bool = False


_CLASSIFY_SETTINGS = IntegratorSettings(rel_tol=1e-10, abs_tol=1e-10,
                                        max_step=0.5, t_max=1e9)


def _node_crossings(traj, gvals, t_lo=0.0):
    """(time, direction) of sign changes of a node-sampled event function,
    refined on dense output by bisection via brentq on the caller side."""
    out = []
    for k in range(len(gvals) - 1):
        ga, gb = gvals[k], gvals[k + 1]
        if not (np.isfinite(ga) and np.isfinite(gb)):
            continue
        if ga == 0.0 or ga * gb >= 0.0:
            continue
        out.append((k, 1 if gb > ga else -1))
    return out


def classify_trajectory(params, state, rules=None, settings=None):
    """Integrate forward and classify by the recorded event sequence."""
    if rules is None:
        rules = ClassifyRules()
    rules = rules.resolve(params)
    if settings is None:
        settings = _CLASSIFY_SETTINGS
    y0 = state_array(state)
    traj = advance(params, y0, settings, t_end=rules.t_max)

    r_nodes = traj.y[:, 0]
    th_nodes = traj.y[:, 2]
    g_sec = r_nodes - rules.section_radius
    g_well = r_nodes - rules.curve.rbar(th_nodes)
    g_diss = r_nodes - rules.dissociation_radius

    def refine(k, fun):
        return brentq(fun, traj.t[k], traj.t[k + 1], xtol=1e-12, rtol=8.9e-16)

    events = []     # (t, kind, direction)
    for k, sgn in _node_crossings(traj, g_sec):
        t = refine(k, lambda tt: float(traj.eval(tt)[0]) - rules.section_radius)
        events.append((t, "section", sgn))
    for k, sgn in _node_crossings(traj, g_well):
        def g(tt):
            y = traj.eval(tt)
            return float(y[0] - rules.curve.rbar(y[2]))
        t = refine(k, g)
        events.append((t, "well", sgn))
    for k, sgn in _node_crossings(traj, g_diss):
        if sgn > 0:
            t = refine(k, lambda tt: float(traj.eval(tt)[0]) - rules.dissociation_radius)
            events.append((t, "dissociation", sgn))
    events.sort(key=lambda e: e[0])

    inside = y0[0] < float(rules.curve.rbar(y0[2]))
    had_contact = inside
    count = 0
    if (rules.count_initial and not inside
            and abs(y0[0] - rules.section_radius) < 1e-9 and y0[1] > 0):
        count = 1
    for t, kind, sgn in events:
        if kind == "section":
            count += 1
        elif kind == "well":
            had_contact = True
            if sgn < 0:       # entering the well region
                if not inside:
                    return TrajectoryClass(CLASS_ISOMERISING, count, t,
                                           had_contact)
                inside = True
            else:
                inside = False
                count = 0     # crossings are counted since leaving the well
        else:                 # dissociation
            if count == 1:
                label = CLASS_DIRECT
            elif had_contact:
                label = CLASS_ROAMING
            else:
                label = CLASS_NONREACTIVE
            return TrajectoryClass(label, count, t, had_contact)
    return TrajectoryClass(CLASS_TIMEOUT, count, traj.t_end, had_contact,
                           failed=not traj.ok)


def classify_grid(params, section, rules=None, settings=None, threads=None):
    """Class label per grid cell; masked cells get code 0.

    Returns (codes array (n, n), list of TrajectoryClass or None).
    """
    if rules is None:
        rules = ClassifyRules()
    rules = rules.resolve(params)
    states, valid = seed_grid(params, section)
    n = section.resolution
    results = [None] * len(states)

    def work(idx):
        return classify_trajectory(params, states[idx], rules, settings)

    live = [i for i in range(len(states)) if valid[i]]
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for idx, res in zip(live, pool.map(work, live)):
                results[idx] = res
    else:
        for idx in live:
            results[idx] = work(idx)
    codes = np.zeros(len(states), dtype=np.int8)
    for idx, res in enumerate(results):
        if res is not None:
            codes[idx] = CLASS_CODES[res.label]
    return codes.reshape(n, n), results


@dataclass
class OverlayReport:
    roaming_present: bool
    area_wiu_region: int
    area_band: int
    area_overlap: int
    wiu_region: np.ndarray       # (n, n) bool, both symmetric components
    band: np.ndarray             # (n, n) bool
    overlap: np.ndarray          # (n, n) bool, anchor component only
    meta: dict = field(default_factory=dict)


def _chain_path(points, rows_axis, pos_axis):
    """Monotone per-row interpolant of a chain: row value -> position."""
    order = np.argsort(points[:, rows_axis])
    rows = points[order, rows_axis]
    pos = points[order, pos_axis]
    uniq, inv = np.unique(np.round(rows, 12), return_inverse=True)
    avg = np.zeros(len(uniq))
    cnt = np.zeros(len(uniq))
    np.add.at(avg, inv, pos)
    np.add.at(cnt, inv, 1.0)
    return uniq, avg / cnt


def intersection_overlay(wiu_trace, wos_trace, anchors=(0.0, math.pi)):
    """Superpose both manifold traces and report the region geometry.

    The region between the two unstable-manifold S-curves that contains
    (theta = anchor, p_theta = 0) is intersected with the band between the
    two stable-manifold circles; a nonempty intersection is the phase-space
    criterion for roaming. Both symmetry-related components (anchors 0 and
    pi) are rasterized; `roaming_present` refers to the first anchor.
    """
    if len(wiu_trace.points) == 0 or len(wos_trace.points) == 0:
        raise ExtractionError("overlay needs nonempty traces for both manifolds")
    section = wiu_trace.section
    if (section.kind, section.resolution) != (wos_trace.section.kind,
                                              wos_trace.section.resolution):
        raise ConfigError("traces live on different sections")
    a1, a2 = section.axes()
    n1, n2 = len(a1), len(a2)

    # S-curve positions theta(p_theta) per chain
    chain_paths = []
    for cid in np.unique(wiu_trace.chain_ids):
        pts = wiu_trace.chain(cid)
        rows, pos = _chain_path(pts, rows_axis=1, pos_axis=0)
        if len(rows) >= 2:
            chain_paths.append((rows, pos))
    if not chain_paths:
        raise ExtractionError("unstable-manifold trace has no usable chains")

    region = np.zeros((n1, n2), dtype=bool)
    component = {a: np.zeros((n1, n2), dtype=bool) for a in anchors}
    for j, p2 in enumerate(a2):
        crossings = []
        for rows, pos in chain_paths:
            if p2 < rows[0] - 1e-12 or p2 > rows[-1] + 1e-12:
                continue
            crossings.append(float(np.interp(p2, rows, pos)))
        if not crossings:
            continue
        crossings.sort()
        for anchor in anchors:
            left = [c for c in crossings if c <= anchor]
            right = [c for c in crossings if c >= anchor]
            if not left or not right:
                continue
            lo, hi = left[-1], right[0]
            cols = (a1 >= lo) & (a1 <= hi)
            component[anchor][cols, j] = True
            region[cols, j] = True

    # stable-manifold band p_theta-(theta) .. p_theta+(theta)
    upper = wos_trace.points[wos_trace.chain_ids == 0]
    lower = wos_trace.points[wos_trace.chain_ids == 1]
    band = np.zeros((n1, n2), dtype=bool)
    if len(upper) >= 2 and len(lower) >= 2:
        thu, pu = _chain_path(upper, rows_axis=0, pos_axis=1)
        thl, pl = _chain_path(lower, rows_axis=0, pos_axis=1)
        for i, t1 in enumerate(a1):
            if not (thu[0] - 1e-12 <= t1 <= thu[-1] + 1e-12):
                continue
            if not (thl[0] - 1e-12 <= t1 <= thl[-1] + 1e-12):
                continue
            hi = float(np.interp(t1, thu, pu))
            lo = float(np.interp(t1, thl, pl))
            band[i, (a2 > lo) & (a2 < hi)] = True

    overlap_anchor = component[anchors[0]] & band
    return OverlayReport(
        roaming_present=bool(overlap_anchor.any()),
        area_wiu_region=int(region.sum()),
        area_band=int(band.sum()),
        area_overlap=int(overlap_anchor.sum()),
        wiu_region=region, band=band, overlap=overlap_anchor,
        meta={"anchors": list(anchors),
              "component_areas": {f"{a:g}": int(component[a].sum())
                                  for a in anchors},
              "overlap_union": int((region & band).sum())})
