import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from refarm.analysis import AnalysisContext, gsm_outage, threshold_at
from refarm.geometry import NetworkGeometry, sector_area
from refarm.radio import RadioParams
from refarm.spectrum_plan import (
    PlanInfeasible,
    PrbGrid,
    build_carrier_grid,
    build_plan,
    calibrate_power,
    pcfich_prbs,
    plan_cell_ids,
    prbs_covering,
    reserve_prbs,
    reserved_bandwidth,
    sinr_degradation_db,
    size_guard_region,
)

GRID = build_carrier_grid()
PRBS = PrbGrid()


def brute_cover(lo, hi):
    """PRBs overlapping [lo, hi) by a positive amount, by enumeration."""
    a = PRBS.start
    return frozenset(k for k in range(PRBS.n_prb)
                     if min(hi, a + (k + 1) * 180e3) - max(lo, a + k * 180e3) > 1e-6)


def test_carrier_grid_counts():
    assert GRID.n_carriers == 48
    assert all(len(GRID.traffic_block(s)) == 13 for s in range(3))
    assert len(GRID.blocks["control"]) == 9
    c = GRID.centers
    assert np.all(np.diff(c) > 0) and np.allclose(np.diff(c), 200e3)


def test_carrier_grid_partition():
    used = sorted(i for v in GRID.blocks.values() for i in v)
    assert used == list(range(48))
    assert 48 * 200e3 + 2 * GRID.edge_guard == pytest.approx(10e6)
    assert GRID.edge_guard == pytest.approx(200e3)
    with pytest.raises(ValueError):
        build_carrier_grid(order=(0, 1, 1, "control"))
    with pytest.raises(ValueError):
        build_carrier_grid(traffic_per_sector=20)


def test_prb_grid():
    assert PRBS.occupied == pytest.approx((0.5e6, 9.5e6))
    assert PRBS.sync_prbs == frozenset(range(22, 28))


def test_reserve_far_edge_example():
    for sector in range(3):
        prbs, carriers = reserve_prbs(GRID, PRBS, sector, 1e6)
        assert len(carriers) == 5
        assert set(carriers) <= set(GRID.traffic_block(sector))
        assert len(prbs) in (6, 7)
        assert not prbs & PRBS.sync_prbs


def test_cover_matches_brute_force_for_all_windows():
    for sector in range(3):
        block = GRID.traffic_block(sector)
        for j in range(len(block) - 4):
            lo, hi = GRID.carrier_edges(block[j:j + 5])
            assert prbs_covering(PRBS, lo, hi) == brute_cover(lo, hi)


def test_reservation_minimal():
    for sector in range(3):
        prbs, carriers = reserve_prbs(GRID, PRBS, sector, 1e6)
        lo, hi = GRID.carrier_edges(carriers)
        a = PRBS.start
        for k in prbs:
            # every PRB overlaps the reserved carriers, so dropping it uncovers some spectrum
            assert min(hi, a + (k + 1) * 180e3) - max(lo, a + k * 180e3) > 0
        # and the set spans the whole reserved range
        assert a + min(prbs) * 180e3 <= lo and a + (max(prbs) + 1) * 180e3 >= hi


def test_reservation_relocated_away_from_sync():
    # sector 1's block touches the channel centre; the nearest window must move
    prbs, carriers = reserve_prbs(GRID, PRBS, 1, 1e6, position="near_edge")
    assert not prbs & PRBS.sync_prbs
    assert carriers != tuple(GRID.traffic_block(1)[-5:])


def test_reservation_zero_and_infeasible():
    assert reserve_prbs(GRID, PRBS, 0, 0.0) == (frozenset(), ())
    with pytest.raises(PlanInfeasible):
        reserve_prbs(GRID, PRBS, 1, 2e6)
    with pytest.raises(PlanInfeasible):
        reserve_prbs(GRID, PRBS, 0, 3e6)


@given(st.integers(1, 13), st.integers(0, 2), st.sampled_from(["far_edge", "near_edge"]))
def test_reservation_never_hits_sync(n, sector, position):
    try:
        prbs, carriers = reserve_prbs(GRID, PRBS, sector, n * 200e3, position)
    except PlanInfeasible:
        return
    assert len(carriers) == n
    assert not prbs & PRBS.sync_prbs


def test_size_guard_region():
    A = sector_area(1000.0)
    assert size_guard_region(A, 0.25) == pytest.approx(262.5188, abs=1e-4)
    assert size_guard_region(A, 0.5) == pytest.approx(371.25, abs=0.01)
    assert size_guard_region(A, 0.0) == 0.0
    assert size_guard_region(A, 0.4) == pytest.approx(math.sqrt(2) * size_guard_region(A, 0.2))
    with pytest.raises(ValueError):
        size_guard_region(A, 1.5)


@given(st.floats(0.0, 1.0))
def test_reserved_bandwidth_tracks_guard_area(frac):
    bw = reserved_bandwidth(GRID, frac)
    block_bw = 13 * 200e3
    A = sector_area(1000.0)
    R_s = size_guard_region(A, frac)
    assert abs(bw / block_bw - math.pi * R_s**2 / A) <= 200e3 / block_bw + 1e-12


def test_pcfich_and_cell_ids():
    for cid in (0, 1, 57, 503):
        p = pcfich_prbs(cid)
        assert 1 <= len(p) <= 8 and max(p) < 50
    reserved = [reserve_prbs(GRID, PRBS, s, 1e6)[0] for s in range(3)]
    plan = plan_cell_ids(reserved)
    assert plan.feasible and 0 < plan.count <= 8
    for cid in plan.allowed:
        assert not pcfich_prbs(cid) & frozenset().union(*reserved)


@pytest.fixture(scope="module")
def ctx():
    g = NetworkGeometry(D=500.0)
    return AnalysisContext.build(g, RadioParams().with_power(0.0))


def test_calibrate_power_self_consistent(ctx):
    g = ctx.geometry
    P_l = calibrate_power(g, ctx.radio, ctx)
    assert P_l > 0
    assert sinr_degradation_db(P_l, g, ctx) == pytest.approx(1.0, abs=0.01)
    assert sinr_degradation_db(calibrate_power(g, ctx.radio, ctx, 3.0), g, ctx) == pytest.approx(3.0, abs=0.01)


def test_calibrate_power_monotone(ctx):
    g = ctx.geometry
    base = calibrate_power(g, ctx.radio, ctx)
    assert calibrate_power(g, ctx.radio, ctx, 2.0) > base
    assert calibrate_power(g, ctx.radio, ctx, 1e-9) == pytest.approx(0.0, abs=1e-9 * base)
    bigger = NetworkGeometry(D=500.0, R_s=300.0)
    assert calibrate_power(bigger, ctx.radio, ctx.with_(geometry=bigger)) > base


def test_calibrated_power_shifts_border_outage_about_one_db(ctx):
    g = ctx.geometry
    P_l = calibrate_power(g, ctx.radio, ctx)
    lit = ctx.with_(radio=ctx.radio.with_power(P_l))
    t_db = np.arange(-10.0, 40.0, 0.25)
    for psi in (0.0, math.pi / 2, math.pi):
        without = [gsm_outage(g.R_s, psi, 10 ** (t / 10), False, lit) for t in t_db]
        with_ = [gsm_outage(g.R_s, psi, 10 ** (t / 10), True, lit) for t in t_db]
        shift = threshold_at(0.5, t_db, without) - threshold_at(0.5, t_db, with_)
        assert 0.0 <= shift <= 1.2


def test_build_plan_document(ctx):
    plan = build_plan(ctx.geometry, ctx)
    doc = plan.to_dict()
    json.dumps(doc)
    assert doc["carrier_grid"]["n_carriers"] == 48
    assert len(doc["reservations"]) == 3
    assert all(not set(r["prbs"]) & set(range(22, 28)) for r in doc["reservations"])
    assert doc["P_l_w"] > 0
    empty = build_plan(ctx.geometry, ctx, reserved_bw=0.0)
    assert all(r.prbs == () for r in empty.reservations)
    with pytest.raises(PlanInfeasible):
        build_plan(ctx.geometry, ctx, reserved_bw=2e6)
