import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tswpm.errors import DegenerateGeometry, IllConditioned, InvalidInput
from tswpm.geometry import AnchorSet, ranges
from tswpm.measurements import ToaSet, TwToaSet, form_tdoa, tdoa_covariance
from tswpm.solvers import (
    CoopScenario,
    SolverConfig,
    ippm,
    nearest_anchor_init,
    nls,
    ts_wpm,
    ts_wpm_coop,
    wnls,
    wnls_coop,
)

SQUARE = AnchorSet([[0.0, 0.0], [40.0, 0.0], [40.0, 40.0], [0.0, 40.0]], 0)
TRUTH = np.array([13.0, 22.0])


def _tdoa(anchors, truth, variances, noise=None):
    d = ranges(anchors, truth)
    if noise is not None:
        d = d + noise
    return form_tdoa(ToaSet(d, variances), anchors.reference_index)


def _noisy(seed, variances, anchors=SQUARE, truth=TRUTH):
    rng = np.random.default_rng(seed)
    var = np.asarray(variances, float)
    return _tdoa(anchors, truth, var, rng.normal(0.0, np.sqrt(var)))


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [dict(epsilon=0.0), dict(consecutive_hits=0), dict(max_iterations=5),
         dict(regularization=-1.0), dict(coop_anchor_scaling="other")],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidInput):
            SolverConfig(**kwargs)

    def test_defaults(self):
        cfg = SolverConfig()
        assert (cfg.epsilon, cfg.consecutive_hits, cfg.max_iterations) == (1e-7, 10, 100)


class TestTsWpm:
    def test_noiseless_square(self):
        tdoa = _tdoa(SQUARE, TRUTH, np.ones(4))
        init = nearest_anchor_init(tdoa, SQUARE)
        r0 = np.hypot(*(init - SQUARE.reference))
        res = ts_wpm(tdoa, SQUARE, init=init, init_range=r0)
        assert np.linalg.norm(res.estimate - TRUTH) < 1e-3

    def test_one_iteration_by_hand(self):
        a = np.array([[0.0, 0.0], [30.0, 0.0], [0.0, 20.0]])
        anchors = AnchorSet(a, 0)
        rt = np.array([0.0, 3.0, -1.5])
        tdoa = form_tdoa(ToaSet(rt + 10.0, [1.0, 1.0, 1.0]), 0)
        theta0 = np.array([4.0, 5.0])
        r0 = 7.0
        # steps written out one anchor at a time
        upd = np.zeros(2)
        dist0 = []
        for b in range(3):
            dx, dy = theta0[0] - a[b, 0], theta0[1] - a[b, 1]
            dist = (dx * dx + dy * dy) ** 0.5
            dist0.append(dist)
            upd[0] += (a[b, 0] + (rt[b] + r0) * dx / dist) / 3
            upd[1] += (a[b, 1] + (rt[b] + r0) * dy / dist) / 3
        resid = sum(
            (rt[b] - (np.hypot(upd[0] - a[b, 0], upd[1] - a[b, 1]) - r0)) ** 2 for b in range(3)
        ) / 3
        r1 = sum((dist0[b] - rt[b]) / 3 for b in range(3))

        res = ts_wpm(tdoa, anchors, weights=np.full(3, 1 / 3), init=theta0, init_range=r0,
                     keep_trace=True)
        np.testing.assert_allclose(res.position_trace[1], upd, rtol=0, atol=1e-12)
        assert res.residual_trace[0] == pytest.approx(resid, abs=1e-12)
        # the range after step one is what the second position update consumes
        step2 = np.full(3, 1 / 3) @ (
            a + ((rt + r1) / ranges(anchors, upd))[:, None] * (upd - a)
        )
        np.testing.assert_allclose(res.position_trace[2], step2, rtol=0, atol=1e-12)

    def test_two_anchors_rejected(self):
        anchors = AnchorSet([[0.0, 0.0], [10.0, 0.0]], 0)
        with pytest.raises(InvalidInput):
            ts_wpm(_tdoa(anchors, [3.0, 4.0], [1.0, 1.0]), anchors)

    def test_init_on_anchor(self):
        tdoa = _tdoa(SQUARE, TRUTH, np.ones(4))
        with pytest.raises(DegenerateGeometry):
            ts_wpm(tdoa, SQUARE, init=[40.0, 0.0])

    def test_weights_shape_checked(self):
        with pytest.raises(InvalidInput):
            ts_wpm(_tdoa(SQUARE, TRUTH, np.ones(4)), SQUARE, weights=[0.5, 0.5])

    def test_no_inversions_and_trace_length(self):
        res = ts_wpm(_noisy(1, [0.1, 0.2, 0.3, 0.4]), SQUARE)
        assert res.op_counter.inversions == 0
        assert len(res.residual_trace) == res.iterations

    def test_converged_flag_semantics(self):
        cfg = SolverConfig()
        for seed in range(20):
            res = ts_wpm(_noisy(seed, [0.5, 0.1, 2.0, 0.3]), SQUARE, cfg=cfg)
            trace = (res.initial_residual,) + res.residual_trace
            deltas = np.abs(np.diff(trace))
            tail_small = len(deltas) >= cfg.consecutive_hits and np.all(
                deltas[-cfg.consecutive_hits:] < cfg.epsilon
            )
            assert res.converged == bool(tail_small)
            assert res.converged or res.iterations == cfg.max_iterations

    def test_deterministic(self):
        tdoa = _noisy(3, [0.3, 0.2, 0.1, 0.9])
        a, b = ts_wpm(tdoa, SQUARE), ts_wpm(tdoa, SQUARE)
        assert np.array_equal(a.estimate, b.estimate)
        assert a.residual_trace == b.residual_trace
        assert a.op_counter == b.op_counter


class TestWnls:
    def test_noiseless(self):
        res = wnls(_tdoa(SQUARE, TRUTH, [0.1, 0.4, 0.2, 0.3]), SQUARE)
        assert np.linalg.norm(res.estimate - TRUTH) < 1e-6

    def test_direct_inverse_matches_sherman_morrison(self):
        var = np.array([0.1, 0.4, 0.2, 0.3])
        tdoa = _noisy(7, var)
        direct = np.linalg.inv(tdoa_covariance(var, 0))
        a = wnls(tdoa, SQUARE)
        b = wnls(tdoa, SQUARE, weight=direct)
        np.testing.assert_allclose(a.estimate, b.estimate, rtol=0, atol=1e-10)
        assert a.iterations == b.iterations

    def test_one_inversion_per_iteration(self):
        res = wnls(_noisy(2, [0.1, 0.4, 0.2, 0.3]), SQUARE)
        assert res.op_counter.inversions == res.iterations

    def test_ill_conditioned_on_a_line(self):
        anchors = AnchorSet([[0.0, 0.0], [10.0, 0.0], [20.0, 0.0]], 0)
        tdoa = _tdoa(anchors, [5.0, 0.0], np.ones(3))
        with pytest.raises(IllConditioned):
            wnls(tdoa, anchors, init=[7.0, 0.0])

    def test_regularization_avoids_failure(self):
        anchors = AnchorSet([[0.0, 0.0], [10.0, 0.0], [20.0, 0.0]], 0)
        tdoa = _tdoa(anchors, [5.0, 0.0], np.ones(3))
        res = wnls(tdoa, anchors, cfg=SolverConfig(regularization=1e-6), init=[7.0, 0.0])
        assert np.all(np.isfinite(res.estimate))


class TestNls:
    def test_noiseless(self):
        res = nls(_tdoa(SQUARE, TRUTH, np.ones(4)), SQUARE)
        assert np.linalg.norm(res.estimate - TRUTH) < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_equal_variances_match_wnls(self, seed):
        # with equal variances the TDOA precision is a multiple of I minus a
        # rank-one term; on a 3-anchor scene the system is square, so both
        # solvers reach the same exact-fit point
        anchors = AnchorSet([[0.0, 0.0], [40.0, 0.0], [10.0, 35.0]], 0)
        tdoa = _noisy(seed, np.full(3, 0.2), anchors=anchors)
        a, b = nls(tdoa, anchors), wnls(tdoa, anchors)
        np.testing.assert_allclose(a.estimate, b.estimate, rtol=0, atol=1e-10)


class TestIppm:
    def test_noiseless(self):
        res = ippm(_tdoa(SQUARE, TRUTH, np.ones(4)), SQUARE)
        assert np.linalg.norm(res.estimate - TRUTH) < 1e-3

    def test_differs_from_tswpm_with_unequal_variances(self):
        tdoa = _noisy(4, [0.05, 1.0, 0.3, 2.0])
        a = ippm(tdoa, SQUARE, keep_trace=True)
        b = ts_wpm(tdoa, SQUARE, keep_trace=True)
        assert not np.allclose(a.position_trace[1], b.position_trace[1])

    def test_no_inversions(self):
        assert ippm(_noisy(5, np.ones(4)), SQUARE).op_counter.inversions == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)))
def test_translation_equivariance(seed, shift):
    shift = np.array(shift)
    var = np.random.default_rng(seed).uniform(0.05, 1.0, 4)
    tdoa = _noisy(seed, var)
    moved = AnchorSet(SQUARE.positions + shift, 0)
    init = np.array([3.0, 2.0])
    for solver in (ts_wpm, wnls, nls, ippm):
        a = solver(tdoa, SQUARE, init=init)
        b = solver(tdoa, moved, init=init + shift)
        np.testing.assert_allclose(b.estimate, a.estimate + shift, rtol=0, atol=1e-9)


def _coop_scene(ue, anchor_sets, coop_sets, var=1e-30):
    """Noiseless cooperative scene built from true UE positions."""
    tdoas = []
    for n, a in enumerate(anchor_sets):
        tdoas.append(_tdoa(a, ue[n], np.full(len(a), 1.0)))
    pairs = []
    for i in range(len(ue)):
        for j in coop_sets[i]:
            if i < j:
                pairs.append((i, j, float(np.hypot(*(ue[i] - ue[j]))), 1.0))
    return CoopScenario(tuple(anchor_sets), tuple(tdoas), TwToaSet(tuple(pairs)), coop_sets)


class TestCoop:
    def test_no_partners_reduces_to_single_ue(self):
        ues = [np.array([13.0, 22.0]), np.array([30.0, 9.0])]
        scn = _coop_scene(ues, [SQUARE, SQUARE], ((), ()))
        scn = CoopScenario(scn.anchor_sets, tuple(_noisy(s, [0.1, 0.5, 0.2, 1.0], truth=u)
                                                  for s, u in enumerate(ues)), scn.twtoa, ((), ()))
        coop = ts_wpm_coop(scn)
        for n in range(2):
            single = ts_wpm(scn.tdoas[n], SQUARE)
            assert np.array_equal(coop[n].estimate, single.estimate)
            assert coop[n].iterations == single.iterations
            assert coop[n].residual_trace == single.residual_trace

    def test_noiseless_three_ues_two_anchors(self):
        ues = np.array([[12.0, 18.0], [31.0, 11.0], [22.0, 33.0]])
        anchor_sets = [
            AnchorSet([[0.0, 0.0], [0.0, 40.0]], 0),
            AnchorSet([[40.0, 0.0], [0.0, 0.0]], 0),
            AnchorSet([[40.0, 40.0], [0.0, 40.0]], 0),
        ]
        coop_sets = ((1, 2), (0, 2), (0, 1))
        scn = _coop_scene(ues, anchor_sets, coop_sets)
        # the fixed point is the truth, but reaching it takes several hundred
        # iterations; the default 100-iteration cap stops at about 0.5 m
        out = ts_wpm_coop(scn, SolverConfig(epsilon=1e-12, max_iterations=2000))
        assert all(r.converged for r in out)
        err = [np.linalg.norm(r.estimate - u) for r, u in zip(out, ues)]
        assert max(err) < 1e-2

    def test_wnls_coop_noiseless(self):
        ues = np.array([[12.0, 18.0], [31.0, 11.0], [22.0, 33.0]])
        anchor_sets = [
            AnchorSet([[0.0, 0.0], [0.0, 40.0]], 0),
            AnchorSet([[40.0, 0.0], [0.0, 0.0]], 0),
            AnchorSet([[40.0, 40.0], [0.0, 40.0]], 0),
        ]
        scn = _coop_scene(ues, anchor_sets, ((1, 2), (0, 2), (0, 1)))
        out = wnls_coop(scn, inits=ues + 0.5)
        for r, u in zip(out, ues):
            assert np.linalg.norm(r.estimate - u) < 1e-6

    def test_order_independent(self):
        ues = np.array([[12.0, 18.0], [31.0, 11.0], [22.0, 33.0]])
        sets = [SQUARE, AnchorSet(SQUARE.positions[::-1], 0), SQUARE]
        scn = _coop_scene(ues, sets, ((1,), (0, 2), (1,)))
        perm = [2, 0, 1]
        inv = np.argsort(perm)
        relabel = tuple(tuple(int(inv[u]) for u in scn.coop_sets[p]) for p in perm)
        scn_p = _coop_scene(ues[perm], [sets[p] for p in perm], relabel)
        a = ts_wpm_coop(scn, inits=ues + 1.0)
        b = ts_wpm_coop(scn_p, inits=ues[perm] + 1.0)
        for i, p in enumerate(perm):
            assert np.array_equal(b[i].estimate, a[p].estimate)

    def test_translation_equivariance(self):
        ues = np.array([[12.0, 18.0], [31.0, 11.0], [22.0, 33.0]])
        shift = np.array([250.0, -75.0])
        sets = [SQUARE] * 3
        scn = _coop_scene(ues, sets, ((1,), (0, 2), (1,)))
        moved = CoopScenario(tuple(AnchorSet(SQUARE.positions + shift, 0) for _ in range(3)),
                             scn.tdoas, scn.twtoa, scn.coop_sets)
        inits = ues + np.array([1.0, -2.0])
        a = ts_wpm_coop(scn, inits=inits)
        b = ts_wpm_coop(moved, inits=inits + shift)
        for x, y in zip(a, b):
            np.testing.assert_allclose(y.estimate, x.estimate + shift, rtol=0, atol=1e-9)

    def test_scenario_validation(self):
        ues = np.array([[12.0, 18.0], [31.0, 11.0]])
        two = AnchorSet([[0.0, 0.0], [40.0, 0.0]], 0)
        with pytest.raises(InvalidInput):
            _coop_scene(ues, [two, two], ((), ()))  # only two constraints each
        with pytest.raises(InvalidInput):
            _coop_scene(ues, [SQUARE, SQUARE], ((0,), ()))
