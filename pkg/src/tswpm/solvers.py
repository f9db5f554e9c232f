"""Iterative TDOA position solvers.

* :func:`ts_wpm` alternates a weighted projection position update with a
  refinement of the reference-anchor range.
* :func:`ts_wpm_coop` adds two-way ranges between cooperating UEs.
* :func:`wnls`, :func:`nls` (Gauss-Newton) and :func:`ippm` (unweighted,
  single-stage projection) are the baselines.

All solvers share one stopping rule: stop once the residual changes by less
than ``epsilon`` for ``consecutive_hits`` iterations in a row, or after
``max_iterations``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, IllConditioned, InvalidInput
from .geometry import AnchorSet
from .measurements import TdoaSet, TwToaSet, projection_weights, tdoa_precision

MAX_CONDITION = 1e12
COOP_SCALINGS = ("as_printed", "alg1_consistent")


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 1e-7  # m²
    consecutive_hits: int = 10
    max_iterations: int = 100
    regularization: float = 0.0  # Gauss-Newton damping, relative to trace(HᵀWH)/D
    coop_anchor_scaling: str = "alg1_consistent"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidInput("epsilon must be positive")
        if self.consecutive_hits < 1:
            raise InvalidInput("consecutive_hits must be at least 1")
        if self.max_iterations < self.consecutive_hits:
            raise InvalidInput("max_iterations must be at least consecutive_hits")
        if self.regularization < 0:
            raise InvalidInput("regularization must be non-negative")
        if self.coop_anchor_scaling not in COOP_SCALINGS:
            raise InvalidInput(f"coop_anchor_scaling must be one of {COOP_SCALINGS}")


@dataclass
class OpCounter:
    """Scalar multiplications/divisions and matrix inversions spent by a solve."""

    mults: int = 0
    inversions: int = 0


@dataclass(frozen=True)
class SolverResult:
    estimate: np.ndarray
    iterations: int
    residual_trace: tuple
    converged: bool
    range_estimate: float = None
    op_counter: OpCounter = field(default_factory=OpCounter)
    initial_residual: float = None
    position_trace: tuple = ()


class _Stopper:
    """Consecutive-small-change convergence test."""

    def __init__(self, cfg, initial_residual):
        self.cfg = cfg
        self.prev = initial_residual
        self.hits = 0
        self.trace = []

    def update(self, residual):
        """Record a residual; True once the stopping rule fires."""
        self.trace.append(residual)
        if abs(residual - self.prev) < self.cfg.epsilon:
            self.hits += 1
        else:
            self.hits = 0
        self.prev = residual
        return self.hits >= self.cfg.consecutive_hits


def _distances(points, theta):
    diff = theta - points
    d = np.sqrt(diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1])
    return diff, d


def _check_distinct(d, what="anchor"):
    if not np.all(d > 0):
        b = int(np.flatnonzero(~(d > 0))[0])
        raise DegenerateGeometry(f"iterate coincides with {what} {b}")


def _check_inputs(tdoa, anchors):
    if not isinstance(anchors, AnchorSet):
        anchors = AnchorSet(anchors, tdoa.reference_index)
    n = len(anchors)
    if n < 3:
        raise InvalidInput("at least three anchors are needed to fix a 2D position from TDOA")
    if tdoa.n_anchors != n:
        raise InvalidInput(f"TDOA set covers {tdoa.n_anchors} anchors, anchor set has {n}")
    return anchors


def nearest_anchor_init(tdoa, anchors, offset=1.0):
    """Start point next to the anchor with the smallest measured range.

    The anchor with the smallest TDOA (the reference counts as 0) is taken as
    nearest. The start point sits ``offset`` meters from it toward the anchor
    centroid because the projection directions are undefined on an anchor.
    """
    pos = np.asarray(anchors.positions if isinstance(anchors, AnchorSet) else anchors, float)
    nearest = int(np.argmin(tdoa.expanded()))
    base = pos[nearest]
    toward = pos.mean(axis=0) - base
    norm = np.hypot(toward[0], toward[1])
    direction = toward / norm if norm > 0 else np.array([1.0, 0.0])
    return base + offset * direction


def _initial_range(tdoa, anchors, init):
    return float(np.hypot(*(np.asarray(init, float) - anchors.positions[tdoa.reference_index])))


def ts_wpm(tdoa, anchors, weights=None, cfg=None, init=None, init_range=None, keep_trace=False):
    """Two-stage weighted projection solve for one UE.

    Args:
        tdoa: range differences against ``tdoa.reference_index``.
        anchors: anchor positions in the same order as the TOAs.
        weights: per-anchor weights summing to one; inverse-variance weights
            from ``tdoa.toa_variances`` when omitted.
        cfg: stopping rule.
        init: start position, defaults to :func:`nearest_anchor_init`.
        init_range: start value of the reference-anchor range, defaults to the
            distance from ``init`` to the reference anchor.
    """
    cfg = cfg or SolverConfig()
    anchors = _check_inputs(tdoa, anchors)
    a = anchors.positions
    n = len(anchors)
    w = projection_weights(tdoa.toa_variances) if weights is None else np.asarray(weights, float)
    if w.shape != (n,):
        raise InvalidInput("need one weight per anchor")
    theta = nearest_anchor_init(tdoa, anchors) if init is None else np.array(init, dtype=float)
    r = _initial_range(tdoa, anchors, theta) if init_range is None else float(init_range)
    rt = tdoa.expanded()
    ops = OpCounter()
    dim = 2

    diff, d = _distances(a, theta)
    _check_distinct(d)
    resid0 = float(np.mean((rt - (d - r)) ** 2))
    ops.mults += n * (dim + 1)
    stop = _Stopper(cfg, resid0)
    path = [theta.copy()] if keep_trace else None
    converged = False
    k = 0
    for k in range(1, cfg.max_iterations + 1):
        # position update from the previous iterate and range
        scale = (rt + r) / d
        theta_new = w @ (a + scale[:, None] * diff)
        diff_new, d_new = _distances(a, theta_new)
        _check_distinct(d_new)
        resid = float(np.mean((rt - (d_new - r)) ** 2))
        # scale: B divs; scale*diff: B*D; weighting: B*D; distances: B*D; residual: B
        ops.mults += n * (3 * dim + 2)
        if keep_trace:
            path.append(theta_new.copy())
        if stop.update(resid):
            theta = theta_new
            converged = True
            break
        # range refinement uses the distances at the previous iterate
        r = float(w @ (d - rt))
        ops.mults += n
        theta, diff, d = theta_new, diff_new, d_new
    else:
        theta = theta_new
    return SolverResult(
        estimate=theta,
        iterations=k,
        residual_trace=tuple(stop.trace),
        converged=converged,
        range_estimate=r,
        op_counter=ops,
        initial_residual=resid0,
        position_trace=tuple(path) if keep_trace else (),
    )


def ippm(tdoa, anchors, cfg=None, init=None, keep_trace=False):
    """Unweighted single-stage projection baseline.

    Same projection step as :func:`ts_wpm` with uniform weights; the reference
    range is recomputed from the current iterate instead of being refined.
    """
    cfg = cfg or SolverConfig()
    anchors = _check_inputs(tdoa, anchors)
    a = anchors.positions
    n = len(anchors)
    ref = tdoa.reference_index
    others = anchors.non_reference
    w = np.full(n, 1.0 / n)
    theta = nearest_anchor_init(tdoa, anchors) if init is None else np.array(init, dtype=float)
    rt = tdoa.expanded()
    ops = OpCounter()
    dim = 2

    def residual(d):
        return float(np.mean((tdoa.values - (d[others] - d[ref])) ** 2))

    diff, d = _distances(a, theta)
    _check_distinct(d)
    stop = _Stopper(cfg, residual(d))
    resid0 = stop.prev
    ops.mults += n * (dim + 1)
    path = [theta.copy()] if keep_trace else None
    converged = False
    k = 0
    for k in range(1, cfg.max_iterations + 1):
        scale = (rt + d[ref]) / d
        theta = w @ (a + scale[:, None] * diff)
        diff, d = _distances(a, theta)
        _check_distinct(d)
        ops.mults += n * (3 * dim + 2)
        if keep_trace:
            path.append(theta.copy())
        if stop.update(residual(d)):
            converged = True
            break
    return SolverResult(
        estimate=theta,
        iterations=k,
        residual_trace=tuple(stop.trace),
        converged=converged,
        op_counter=ops,
        initial_residual=resid0,
        position_trace=tuple(path) if keep_trace else (),
    )


def _gauss_newton(model, values, weight, theta0, cfg, ops):
    """Gauss-Newton on ``values ≈ model(theta)`` with weight matrix ``weight``.

    ``model(theta)`` returns ``(prediction, jacobian, mults)``. The weighted
    residual is ``eᵀWe / len(values)``.
    """
    m = values.size
    theta = theta0.copy()
    p = theta.size
    pred, jac, mults = model(theta)
    e = values - pred
    we = weight @ e
    resid0 = float(e @ we) / m
    ops.mults += mults + m * m + m
    stop = _Stopper(cfg, resid0)
    converged = False
    k = 0
    for k in range(1, cfg.max_iterations + 1):
        wj = weight @ jac
        normal = jac.T @ wj
        grad = wj.T @ e
        ops.mults += m * m * p + m * p * p + m * p
        lam = cfg.regularization * np.trace(normal) / p
        if lam > 0:
            normal = normal + lam * np.eye(p)
        elif not np.all(np.isfinite(normal)) or np.linalg.cond(normal) > MAX_CONDITION:
            raise IllConditioned("normal matrix is numerically singular")
        inv = np.linalg.inv(normal)
        ops.inversions += 1
        ops.mults += p**3 + p * p
        theta = theta + inv @ grad
        if not np.all(np.isfinite(theta)):
            raise IllConditioned("Gauss-Newton step is not finite")
        pred, jac, mults = model(theta)
        e = values - pred
        we = weight @ e
        resid = float(e @ we) / m
        ops.mults += mults + m * m + m
        if stop.update(resid):
            converged = True
            break
    return theta, k, stop, converged, resid0


def _tdoa_model(anchors, ref):
    a = anchors.positions
    others = anchors.non_reference
    n = len(anchors)

    def model(theta):
        diff, d = _distances(a, theta)
        _check_distinct(d)
        u = diff / d[:, None]
        return d[others] - d[ref], u[others] - u[ref], n * 2 * 2

    return model


def wnls(tdoa, anchors, cfg=None, init=None, weight=None):
    """Weighted Gauss-Newton TDOA solve with the full TDOA precision matrix.

    The precision is built by Sherman-Morrison from the TOA variances, so the
    only inversion per iteration is the 2×2 normal matrix.
    """
    cfg = cfg or SolverConfig()
    anchors = _check_inputs(tdoa, anchors)
    ref = tdoa.reference_index
    if weight is None:
        weight = tdoa_precision(tdoa.toa_variances, ref)
    theta0 = nearest_anchor_init(tdoa, anchors) if init is None else np.array(init, dtype=float)
    ops = OpCounter()
    model = _tdoa_model(anchors, ref)
    theta, k, stop, converged, resid0 = _gauss_newton(
        model, tdoa.values, np.asarray(weight, float), theta0, cfg, ops
    )
    return SolverResult(
        estimate=theta,
        iterations=k,
        residual_trace=tuple(stop.trace),
        converged=converged,
        op_counter=ops,
        initial_residual=resid0,
    )


def nls(tdoa, anchors, cfg=None, init=None):
    """Unweighted Gauss-Newton TDOA solve."""
    return wnls(tdoa, anchors, cfg, init, weight=np.eye(tdoa.values.size))


@dataclass(frozen=True)
class CoopScenario:
    """Per-UE anchor measurements plus two-way ranges between cooperating UEs.

    ``coop_sets[n]`` lists the UEs whose ranges UE ``n`` uses. Every listed
    pair must be present in ``twtoa``.
    """

    anchor_sets: tuple
    tdoas: tuple
    twtoa: TwToaSet
    coop_sets: tuple

    def __post_init__(self):
        n_ue = len(self.tdoas)
        if len(self.anchor_sets) != n_ue or len(self.coop_sets) != n_ue:
            raise InvalidInput("need one anchor set, TDOA set and cooperation set per UE")
        pairs = self.twtoa.lookup()
        sets = []
        for n, s in enumerate(self.coop_sets):
            s = tuple(int(u) for u in s)
            if n in s:
                raise InvalidInput(f"UE {n} cannot cooperate with itself")
            for u in s:
                if not 0 <= u < n_ue:
                    raise InvalidInput(f"cooperation partner {u} out of range")
                if (n, u) not in pairs:
                    raise InvalidInput(f"no two-way range between UEs {n} and {u}")
            if len(self.tdoas[n].toa_variances) + len(s) < 3:
                raise InvalidInput(f"UE {n} has fewer than three constraints")
            if len(self.tdoas[n].toa_variances) < 2:
                raise InvalidInput(f"UE {n} sees fewer than two anchors")
            sets.append(s)
        object.__setattr__(self, "coop_sets", tuple(sets))

    @property
    def n_ues(self):
        return len(self.tdoas)

    def anchor_weights(self, n):
        return projection_weights(self.tdoas[n].toa_variances)

    def coop_ranges(self, n):
        """Measured ranges and variances to the partners of UE ``n``."""
        pairs = self.twtoa.lookup()
        if not self.coop_sets[n]:
            return np.zeros(0), np.zeros(0)
        rv = np.array([pairs[(n, u)] for u in self.coop_sets[n]])
        return rv[:, 0], rv[:, 1]


def ts_wpm_coop(scn, cfg=None, inits=None, init_ranges=None):
    """Cooperative two-stage weighted projection for all UEs of ``scn``.

    Every UE reads its partners' estimates from the previous iteration, so the
    result does not depend on the order in which UEs are processed. A UE stops
    updating once its own stopping rule fires.

    With ``coop_anchor_scaling == "alg1_consistent"`` anchor and partner terms
    share one set of inverse-variance weights summing to one, and the range
    refinement uses the anchor weights alone; with no partners this is exactly
    :func:`ts_wpm`. ``"as_printed"`` scales the anchor terms by 1/B and the
    partner terms by 1/|S_n| on top of their separately normalized weights.
    """
    cfg = cfg or SolverConfig()
    n_ue = scn.n_ues
    printed = cfg.coop_anchor_scaling == "as_printed"

    anchors, rts, w_anchor, w_pos_anchor, w_pos_coop, coop_r, w_coop = [], [], [], [], [], [], []
    for n in range(n_ue):
        aset = scn.anchor_sets[n]
        if not isinstance(aset, AnchorSet):
            aset = AnchorSet(aset, scn.tdoas[n].reference_index)
        tdoa = scn.tdoas[n]
        anchors.append(aset.positions)
        rts.append(tdoa.expanded())
        wa = projection_weights(tdoa.toa_variances)
        r_u, v_u = scn.coop_ranges(n)
        coop_r.append(r_u)
        if printed:
            b = len(wa)
            wu = projection_weights(v_u) if v_u.size else v_u
            w_pos_anchor.append(wa / b)
            w_pos_coop.append(wu / max(len(wu), 1))
            w_anchor.append(wa / b)
            w_coop.append(wu)
        else:
            joint = projection_weights(np.concatenate([tdoa.toa_variances, v_u]))
            w_pos_anchor.append(joint[: len(wa)])
            w_pos_coop.append(joint[len(wa):])
            w_anchor.append(wa)
            w_coop.append(projection_weights(v_u) if v_u.size else v_u)

    if inits is None:
        theta = np.array([nearest_anchor_init(scn.tdoas[n], anchors[n]) for n in range(n_ue)])
    else:
        theta = np.array(inits, dtype=float).reshape(n_ue, 2)
    if init_ranges is None:
        r = np.array(
            [np.hypot(*(theta[n] - anchors[n][scn.tdoas[n].reference_index])) for n in range(n_ue)]
        )
    else:
        r = np.array(init_ranges, dtype=float).reshape(n_ue)

    def coop_residual(n, own, others):
        if not scn.coop_sets[n]:
            return 0.0
        _, d_u = _distances(others, own)
        return float(np.mean((coop_r[n] - d_u) ** 2))

    stops, ops, res_init = [], [], []
    for n in range(n_ue):
        _, d = _distances(anchors[n], theta[n])
        _check_distinct(d)
        res0 = float(np.mean((rts[n] - (d - r[n])) ** 2))
        res0 += coop_residual(n, theta[n], theta[list(scn.coop_sets[n])])
        stops.append(_Stopper(cfg, res0))
        res_init.append(res0)
        ops.append(OpCounter())

    active = np.ones(n_ue, dtype=bool)
    iterations = np.zeros(n_ue, dtype=int)
    converged = np.zeros(n_ue, dtype=bool)
    k = 0
    while active.any() and k < cfg.max_iterations:
        k += 1
        prev = theta.copy()
        for n in np.flatnonzero(active):
            s = list(scn.coop_sets[n])
            a = anchors[n]
            diff, d = _distances(a, prev[n])
            _check_distinct(d)
            new = w_pos_anchor[n] @ (a + ((rts[n] + r[n]) / d)[:, None] * diff)
            nb = len(a)
            ops[n].mults += nb * 8
            if s:
                diff_u, d_u = _distances(prev[s], prev[n])
                _check_distinct(d_u, "cooperating UE")
                new = new + w_pos_coop[n] @ (prev[s] + (coop_r[n] / d_u)[:, None] * diff_u)
                ops[n].mults += len(s) * 8
            _, d_new = _distances(a, new)
            _check_distinct(d_new)
            resid = float(np.mean((rts[n] - (d_new - r[n])) ** 2))
            resid += coop_residual(n, new, prev[s])
            theta[n] = new
            iterations[n] = k
            if stops[n].update(resid):
                converged[n] = True
                active[n] = False
                continue
            r[n] = float(w_anchor[n] @ (d - rts[n]))
            ops[n].mults += nb

    return [
        SolverResult(
            estimate=theta[n].copy(),
            iterations=int(iterations[n]),
            residual_trace=tuple(stops[n].trace),
            converged=bool(converged[n]),
            range_estimate=float(r[n]),
            op_counter=ops[n],
            initial_residual=res_init[n],
        )
        for n in range(n_ue)
    ]


def wnls_coop(scn, cfg=None, inits=None):
    """Joint weighted Gauss-Newton over all UE positions of ``scn``.

    Stacks every UE's TDOAs (weighted by their precision matrices) and every
    two-way range in ``scn.twtoa`` (inverse-variance weighted).
    """
    cfg = cfg or SolverConfig()
    n_ue = scn.n_ues
    blocks, values, anchors = [], [], []
    for n in range(n_ue):
        tdoa = scn.tdoas[n]
        aset = scn.anchor_sets[n]
        if not isinstance(aset, AnchorSet):
            aset = AnchorSet(aset, tdoa.reference_index)
        anchors.append(aset)
        blocks.append(tdoa_precision(tdoa.toa_variances, tdoa.reference_index))
        values.append(tdoa.values)
    pairs = scn.twtoa.pairs
    sizes = [b.shape[0] for b in blocks]
    m_tdoa = sum(sizes)
    m = m_tdoa + len(pairs)
    weight = np.zeros((m, m))
    row = 0
    for b in blocks:
        weight[row : row + b.shape[0], row : row + b.shape[0]] = b
        row += b.shape[0]
    for idx, (_, _, _, var) in enumerate(pairs):
        weight[m_tdoa + idx, m_tdoa + idx] = 1.0 / var
    values = np.concatenate(values + [np.array([p[2] for p in pairs])])
    models = [_tdoa_model(anchors[n], scn.tdoas[n].reference_index) for n in range(n_ue)]

    def model(flat):
        pos = flat.reshape(n_ue, 2)
        pred = np.empty(m)
        jac = np.zeros((m, 2 * n_ue))
        mults = 0
        row = 0
        for n in range(n_ue):
            p, j, c = models[n](pos[n])
            pred[row : row + sizes[n]] = p
            jac[row : row + sizes[n], 2 * n : 2 * n + 2] = j
            row += sizes[n]
            mults += c
        for idx, (i, j, _, _) in enumerate(pairs):
            diff = pos[i] - pos[j]
            d = np.hypot(diff[0], diff[1])
            if d == 0:
                raise DegenerateGeometry(f"UEs {i} and {j} coincide")
            u = diff / d
            pred[m_tdoa + idx] = d
            jac[m_tdoa + idx, 2 * i : 2 * i + 2] = u
            jac[m_tdoa + idx, 2 * j : 2 * j + 2] = -u
            mults += 4
        return pred, jac, mults

    if inits is None:
        inits = [nearest_anchor_init(scn.tdoas[n], anchors[n]) for n in range(n_ue)]
    theta0 = np.array(inits, dtype=float).reshape(-1)
    ops = OpCounter()
    flat, k, stop, converged, resid0 = _gauss_newton(model, values, weight, theta0, cfg, ops)
    pos = flat.reshape(n_ue, 2)
    return [
        SolverResult(
            estimate=pos[n].copy(),
            iterations=k,
            residual_trace=tuple(stop.trace),
            converged=converged,
            op_counter=ops,
            initial_residual=resid0,
        )
        for n in range(n_ue)
    ]
