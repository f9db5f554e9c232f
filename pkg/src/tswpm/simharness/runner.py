"""Monte Carlo orchestration: UE drops, link budgets, CRLB-driven measurements, solves."""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from ..channel import (
    LinkGeometry,
    path_loss,
    sample_cdl_a,
    sample_shadow,
    snr_db,
    to_sample_grid,
)
from ..crlb import (
    PrsGrid,
    fim_position,
    fim_tdoa_from_toa,
    fim_toa_awgn,
    fim_toa_multipath,
    peb,
    tdoa_transform,
    toa_variance_meters,
)
from ..errors import LocalizationError
from ..geometry import AnchorSet, dop, jacobian_tdoa, jacobian_toa
from ..measurements import (
    LinkModel,
    ToaSet,
    TwToaSet,
    form_tdoa,
    select_reference,
    synth_toa_multipath,
)
from ..solvers import (
    CoopScenario,
    ippm,
    nearest_anchor_init,
    nls,
    ts_wpm,
    ts_wpm_coop,
    wnls,
    wnls_coop,
)
from ..units import db_to_linear
from .outputs import summarize
from .scenario import WNLS_REG_LAMBDA

# stream tags appended to (trial, ue) so every random draw has its own stream
DROP_STREAM = 0
PARTNER_STREAM = 1
JITTER_STREAM = 2
LINK_STREAM_BASE = 16


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    ue: int
    solver: str
    error_m: float
    iterations: int
    converged: bool
    gdop: float
    ref_snr_db: float
    peb_m: float
    mults: int
    inversions: int
    failure: str
    snrs_db: tuple


def stream(master_seed, trial, ue, tag):
    """Independent generator for one (trial, ue, tag) triple."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(trial, ue, tag))
    return np.random.default_rng(seq)


def indoor_distance(a, p, area):
    """Length of the segment ``a``→``p`` that lies inside the building rectangle."""
    lo, hi = area.corners
    d = p - a
    t0, t1 = 0.0, 1.0
    for axis in range(2):
        if d[axis] == 0.0:
            if not lo[axis] <= a[axis] <= hi[axis]:
                return 0.0
            continue
        ta = (lo[axis] - a[axis]) / d[axis]
        tb = (hi[axis] - a[axis]) / d[axis]
        t0 = max(t0, min(ta, tb))
        t1 = min(t1, max(ta, tb))
    if t1 <= t0:
        return 0.0
    return float((t1 - t0) * math.hypot(d[0], d[1]))


def _inside(point, area):
    lo, hi = area.corners
    return bool(np.all(point >= lo) and np.all(point <= hi))


class LinkSimulator:
    """Per-link SNR and CRLB variances for one scenario."""

    def __init__(self, scn):
        self.scn = scn
        self.budget = scn.budget
        self.prs = PrsGrid.qpsk(scn.budget.n_subcarriers, scn.budget.scs)
        self.multipath = scn.channel_mode == "multipath"

    def link(self, src, dst, rng, indoor_src=False):
        """SNR (dB) and LinkModel for a link from ``src`` to a UE at ``dst``."""
        scn = self.scn
        dist_2d = math.hypot(dst[0] - src[0], dst[1] - src[1])
        dist_3d = max(math.hypot(dist_2d, scn.height_difference if not indoor_src else 0.0), 1.0)
        if indoor_src:
            geom = LinkGeometry(dist_3d, indoor_distance_2d=dist_2d)
        else:
            walls = 0 if _inside(src, scn.ue_area) else 1
            geom = LinkGeometry(
                dist_3d,
                indoor_distance_2d=indoor_distance(src, dst, scn.ue_area),
                n_external_walls=walls,
            )
        shadow = sample_shadow(rng, self.budget.shadow_std)
        snr = snr_db(self.budget, path_loss(geom), shadow)
        gamma = float(db_to_linear(snr))
        var_awgn = toa_variance_meters(
            fim_toa_awgn(gamma, self.budget.scs, self.budget.n_subcarriers)
        )
        var_mp, bias = var_awgn, 0.0
        if self.multipath:
            cir = to_sample_grid(
                sample_cdl_a(rng, scn.delay_spread, scn.max_taps), self.budget.sample_period
            )
            var_mp = toa_variance_meters(fim_toa_multipath(cir, self.prs, gamma))
            if var_mp > var_awgn:
                bias = math.sqrt(var_mp - var_awgn)
            else:
                # the projected information can exceed the single-path value for
                # favorable tap phases; treat such links as bias-free
                var_mp = var_awgn
        return snr, LinkModel(dist_2d, gamma, var_awgn, var_mp, bias)


def _solve_single(name, tdoa, anchors, cfg):
    if name == "tswpm":
        return ts_wpm(tdoa, anchors, cfg=cfg)
    if name == "wnls":
        return wnls(tdoa, anchors, cfg=cfg)
    if name == "wnls_reg":
        return wnls(tdoa, anchors, cfg=replace(cfg, regularization=WNLS_REG_LAMBDA))
    if name == "nls":
        return nls(tdoa, anchors, cfg=cfg)
    if name == "ippm":
        return ippm(tdoa, anchors, cfg=cfg)
    raise ValueError(f"unknown solver {name!r}")


def _drop_ue(scn, trial, ue):
    rng = stream(scn.master_seed, trial, ue, DROP_STREAM)
    lo, hi = scn.ue_area.corners
    return lo + rng.random(2) * (hi - lo)


def _geometry_stats(anchors, truth, variances, ref):
    try:
        gdop = dop(jacobian_toa(anchors, truth)).gdop
    except LocalizationError:
        gdop = math.inf
    try:
        fim = fim_position(
            jacobian_tdoa(anchors.with_reference(ref), truth),
            fim_tdoa_from_toa(variances, tdoa_transform(len(anchors), ref)),
        )
        bound = peb(fim)
    except LocalizationError:
        bound = math.inf
    return gdop, bound


def _failure_record(trial, ue, name, gdop, ref_snr, bound, snrs, exc):
    return TrialRecord(
        trial, ue, name, math.inf, 0, False, gdop, ref_snr, bound, 0, 0, type(exc).__name__, snrs
    )


def run_trial_single(scn, sim, trial):
    """All UEs and solvers of one non-cooperative trial."""
    records = []
    anchors = scn.anchors
    n_b = len(anchors)
    for ue in range(scn.n_ues):
        truth = _drop_ue(scn, trial, ue)
        snrs, links, toas = [], [], []
        for b in range(n_b):
            rng = stream(scn.master_seed, trial, ue, LINK_STREAM_BASE + b)
            snr, link = sim.link(anchors.positions[b], truth, rng)
            snrs.append(snr)
            links.append(link)
            toas.append(synth_toa_multipath(link, rng))
        variances = np.array([lk.var_multipath for lk in links])
        ref = select_reference(snrs)
        tdoa = form_tdoa(ToaSet(np.array(toas), variances), ref)
        aset = anchors.with_reference(ref)
        gdop, bound = _geometry_stats(anchors, truth, variances, ref)
        snr_tuple = tuple(float(s) for s in snrs)
        for name in scn.solvers:
            try:
                res = _solve_single(name, tdoa, aset, scn.solver_config)
            except LocalizationError as exc:
                records.append(
                    _failure_record(trial, ue, name, gdop, snrs[ref], bound, snr_tuple, exc)
                )
                continue
            err = math.hypot(*(res.estimate - truth))
            records.append(
                TrialRecord(
                    trial,
                    ue,
                    name,
                    float(err),
                    res.iterations,
                    res.converged,
                    gdop,
                    float(snrs[ref]),
                    bound,
                    res.op_counter.mults,
                    res.op_counter.inversions,
                    "",
                    snr_tuple,
                )
            )
    return records


def run_trial_coop(scn, sim, trial):
    """One cooperative trial: every UE sees its strongest anchors plus partner ranges."""
    anchors = scn.anchors
    n_b = len(anchors)
    n_ue = scn.n_ues
    n_vis = scn.coop.anchors_visible_per_ue
    truths = np.array([_drop_ue(scn, trial, ue) for ue in range(n_ue)])

    anchor_sets, tdoas, snr_lists, ref_snrs, gdops, pebs = [], [], [], [], [], []
    for ue in range(n_ue):
        snrs, links, toas = [], [], []
        for b in range(n_b):
            rng = stream(scn.master_seed, trial, ue, LINK_STREAM_BASE + b)
            snr, link = sim.link(anchors.positions[b], truths[ue], rng)
            snrs.append(snr)
            links.append(link)
            toas.append(synth_toa_multipath(link, rng))
        visible = np.sort(np.argsort(-np.array(snrs), kind="stable")[:n_vis])
        var = np.array([links[b].var_multipath for b in visible])
        vis_snrs = [snrs[b] for b in visible]
        ref = select_reference(vis_snrs)
        aset = AnchorSet(anchors.positions[visible], ref)
        anchor_sets.append(aset)
        tdoas.append(form_tdoa(ToaSet(np.array([toas[b] for b in visible]), var), ref))
        snr_lists.append(tuple(float(s) for s in snrs))
        ref_snrs.append(float(vis_snrs[ref]))
        gdops.append(math.inf)
        pebs.append(math.inf)

    # partner selection and two-way ranges
    coop_sets = []
    for ue in range(n_ue):
        rng = stream(scn.master_seed, trial, ue, PARTNER_STREAM)
        others = np.array([u for u in range(n_ue) if u != ue])
        chosen = rng.choice(others, size=scn.coop.n_coop, replace=False)
        coop_sets.append(tuple(sorted(int(u) for u in chosen)))
    pairs = sorted({(min(n, u), max(n, u)) for n in range(n_ue) for u in coop_sets[n]})
    tw = []
    for i, j in pairs:
        rng = stream(scn.master_seed, trial, n_ue + i, LINK_STREAM_BASE + j)
        _, link = sim.link(truths[i], truths[j], rng, indoor_src=True)
        tw.append((i, j, synth_toa_multipath(link, rng), link.var_multipath))
    twtoa = TwToaSet(tuple(tw))
    scenario = CoopScenario(tuple(anchor_sets), tuple(tdoas), twtoa, tuple(coop_sets))

    # nearest-anchor starts, jittered so UEs sharing an anchor do not coincide
    inits = []
    for ue in range(n_ue):
        rng = stream(scn.master_seed, trial, ue, JITTER_STREAM)
        angle = rng.uniform(0.0, 2.0 * math.pi)
        base = nearest_anchor_init(tdoas[ue], anchor_sets[ue])
        inits.append(base + np.array([math.cos(angle), math.sin(angle)]))
    inits = np.array(inits)

    # geometry statistics from the anchors and partners each UE actually uses
    for ue in range(n_ue):
        rows = [jacobian_toa(anchor_sets[ue], truths[ue])]
        for u in coop_sets[ue]:
            diff = truths[ue] - truths[u]
            rows.append(diff[None, :] / np.hypot(*diff))
        try:
            gdops[ue] = dop(np.vstack(rows)).gdop
        except LocalizationError:
            gdops[ue] = math.inf

    records = []
    cfg = scn.solver_config
    for name in scn.solvers:
        try:
            if name == "tswpm":
                results = ts_wpm_coop(scenario, cfg, inits=inits)
            elif name == "wnls":
                results = wnls_coop(scenario, cfg, inits=inits)
            else:
                results = wnls_coop(
                    scenario, replace(cfg, regularization=WNLS_REG_LAMBDA), inits=inits
                )
        except LocalizationError as exc:
            for ue in range(n_ue):
                records.append(
                    _failure_record(
                        trial, ue, name, gdops[ue], ref_snrs[ue], pebs[ue], snr_lists[ue], exc
                    )
                )
            continue
        for ue, res in enumerate(results):
            err = math.hypot(*(res.estimate - truths[ue]))
            records.append(
                TrialRecord(
                    trial,
                    ue,
                    name,
                    float(err) if math.isfinite(err) else math.inf,
                    res.iterations,
                    res.converged,
                    gdops[ue],
                    ref_snrs[ue],
                    pebs[ue],
                    res.op_counter.mults,
                    res.op_counter.inversions,
                    "" if math.isfinite(err) else "NonFinite",
                    snr_lists[ue],
                )
            )
    return records


def _run_chunk(args):
    scn, trials = args
    sim = LinkSimulator(scn)
    fn = run_trial_coop if scn.coop.enabled else run_trial_single
    out = []
    for t in trials:
        out.extend(fn(scn, sim, t))
    return out


def _sort_key(order):
    return lambda r: (r.trial, r.ue, order[r.solver])


def run_monte_carlo(scn, workers=1):
    """Run every trial of ``scn`` and return ``(records, summary)``.

    Every random draw comes from a stream keyed by (seed, trial, ue, link), so
    the records do not depend on ``workers``.
    """
    trials = list(range(scn.trials))
    if workers <= 1:
        records = _run_chunk((scn, trials))
    else:
        chunks = [trials[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = [r for part in pool.map(_run_chunk, [(scn, c) for c in chunks]) for r in part]
    order = {name: i for i, name in enumerate(scn.solvers)}
    records.sort(key=_sort_key(order))
    return records, summarize(records, scn)


def drop_bounds(scn, n_drops=None):
    """GDOP and PEB per UE drop with shadowing off and the AWGN bound.

    Deterministic table used by the ``bounds`` CLI command.
    """
    n_drops = scn.trials if n_drops is None else n_drops
    budget = replace(scn.budget, shadow_std=0.0)
    quiet = replace(scn, budget=budget, channel_mode="awgn")
    sim = LinkSimulator(quiet)
    rows = []
    for trial in range(n_drops):
        truth = _drop_ue(scn, trial, 0)
        snrs, variances = [], []
        for b in range(len(scn.anchors)):
            snr, link = sim.link(scn.anchors.positions[b], truth, None)
            snrs.append(snr)
            variances.append(link.var_awgn)
        ref = select_reference(snrs)
        gdop, bound = _geometry_stats(scn.anchors, truth, np.array(variances), ref)
        rows.append(
            {
                "drop": trial,
                "x": float(truth[0]),
                "y": float(truth[1]),
                "gdop": gdop,
                "peb_m": bound,
                "ref_snr_db": float(snrs[ref]),
            }
        )
    return rows
