import itertools
import math

import pytest
from hypothesis import given, settings, strategies as st

from griddisperse import protocol_crash as pc
from griddisperse.errors import BadDimensions, InternalError, RankOverflow
from griddisperse.grid import NW, SW, Dir
from griddisperse.sim_engine import SimConfig, run
from griddisperse.grid import GridSpec


def test_init_memory_examples():
    m = pc.init_memory(7, "SquareCrash")
    assert (m.id, m.round_ctr, m.phase) == (7, 0, pc.Phase.ReachBoundary)
    assert pc.init_memory(0, "RectCrash").id == 0


def test_gates_even_4():
    g = pc.compute_gates(4, 4)
    assert (g.g_snapshot, g.g_columns_even, g.g_deadline) == (12, 24, 28)


def test_gates_odd_5():
    g = pc.compute_gates(5, 5)
    assert (g.g_middle, g.g_center, g.g_to_corner, g.g_columns_odd, g.g_deadline) == (15, 18, 20, 25, 35)


def test_gates_smallest_square():
    g = pc.compute_gates(2, 2)
    assert (g.g_snapshot, g.g_columns_even, g.g_deadline) == (6, 12, 14)


@pytest.mark.parametrize("s", range(2, 40))
def test_square_gate_multiples(s):
    g = pc.compute_gates(s, s)
    assert g.g_deadline == 7 * s
    if s % 2 == 0:
        assert (g.g_snapshot, g.g_columns_even) == (3 * s, 6 * s)
    else:
        assert g.g_center == math.ceil(3.5 * s)
        assert (g.g_middle, g.g_to_corner, g.g_columns_odd) == (3 * s, 4 * s, 5 * s)


@pytest.mark.parametrize("h,w", [(8, 4), (16, 4), (9, 3), (12, 6), (3, 9), (7, 5), (2, 9)])
def test_rect_deadline_within_nine_ell(h, w):
    assert pc.compute_gates(h, w, rectangular=True).g_deadline <= 9 * max(h, w)


def test_gate_errors():
    with pytest.raises(BadDimensions):
        pc.compute_gates(1, 4)
    with pytest.raises(BadDimensions):
        pc.compute_gates(4, 6)


def test_snapshot_rank_examples():
    ids = [9, 4, 12, 7, 30]
    assert pc.snapshot_rank(ids, 30, 4) is None
    assert pc.snapshot_rank(ids, 4, 4) == 0
    assert pc.snapshot_rank([5], 5, 4) == 0
    with pytest.raises(InternalError):
        pc.snapshot_rank([1, 2], 3, 4)


def test_target_of_rank_examples():
    assert pc.target_of_rank(3, SW, 2, 2) == (1, 1)
    assert pc.target_of_rank(7, NW, 5, 5) == (1, 2)
    for corner in range(4):
        assert pc.target_of_rank(0, corner, 3, 3) == (0, 0)
    with pytest.raises(RankOverflow):
        pc.target_of_rank(4, SW, 2, 2)


@given(st.integers(1, 12), st.integers(1, 12))
def test_target_of_rank_injective(h, w):
    seen = {pc.target_of_rank(r, SW, h, w) for r in range(h * w)}
    assert len(seen) == h * w


@given(st.lists(st.integers(0, 500), min_size=1, max_size=40, unique=True), st.integers(0, 40))
def test_snapshot_targets_distinct(ids, cap):
    ranks = [pc.snapshot_rank(ids, i, cap) for i in ids]
    kept = [r for r in ranks if r is not None]
    assert len(kept) == len(set(kept)) == min(cap, len(ids))


def test_reach_boundary_goes_straight():
    # entered through port 1 at an internal node: the straight exit is port 3
    m = pc.CrashRobotMemory(id=7, round_ctr=3, heading=Dir.E)
    _, action = pc.step_compute(m, pc.Observation(4, 1, (m,)))
    assert action == pc.Move(3)


def test_first_move_uses_port_one():
    m = pc.init_memory(3)
    _, action = pc.step_compute(m, pc.Observation(4, None, (m,)))
    assert action == pc.Move(1)


def test_wait_gate_stays_before_gate():
    m = pc.CrashRobotMemory(id=1, round_ctr=11, phase=pc.Phase.WaitGate, side_a=4, side_b=4, absent=3)
    new, action = pc.step_compute(m, pc.Observation(2, None, (m,)))
    assert action == pc.STAY
    assert new.round_ctr == 12


def test_step_compute_does_not_mutate_input():
    m = pc.init_memory(3)
    before = m.clone()
    pc.step_compute(m, pc.Observation(4, None, (m,)))
    assert m == before


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 20), st.integers(0, 4), st.sampled_from([2, 3, 4]), st.sampled_from([None, 1, 2]))
def test_step_compute_deterministic(rid, rnd, degree, entry):
    m = pc.CrashRobotMemory(id=rid, round_ctr=rnd)
    obs = pc.Observation(degree, entry if entry is None or entry <= degree else None, (m,))
    try:
        a = pc.step_compute(m.clone(), obs)
    except Exception as exc:  # an inconsistent observation must fail the same way twice
        with pytest.raises(type(exc)):
            pc.step_compute(m.clone(), obs)
        return
    assert pc.step_compute(m.clone(), obs) == a


def test_full_4x4_run_from_one_node():
    cfg = SimConfig(GridSpec(4, 4), "SquareCrash", tuple((i, (0, 0)) for i in range(16)))
    rep = run(cfg)
    assert rep.dispersed and rep.violations == []
    assert rep.rounds_used <= 28


@pytest.mark.parametrize("s", range(2, 11))
def test_every_square_disperses_from_each_corner(s):
    for corner in itertools.product((0, s - 1), repeat=2):
        cfg = SimConfig(GridSpec(s, s), "SquareCrash", tuple((i, corner) for i in range(s * s)))
        rep = run(cfg)
        assert rep.dispersed, rep.violations
        assert rep.rounds_used <= 7 * s + 8


def test_budget_formula():
    assert pc.crash_budget(16, 15) == 12 * 4 + 16 == 64
    widths = pc.register_widths(16, 15)
    assert sum(widths.values()) <= pc.crash_budget(16, 15)


@given(st.integers(4, 4096), st.integers(0, 10_000))
def test_register_widths_fit_budget(n, idmax):
    assert sum(pc.register_widths(n, idmax).values()) <= pc.crash_budget(n, idmax)


def test_serialize_round_trip():
    m = pc.CrashRobotMemory(id=13, round_ctr=40, phase=pc.Phase.EvenAllocate, heading=Dir.N, side_a=8, side_b=8,
                            step_ctr=3, corner_tag=2, rank=11, target_col_off=2, target_row_off=3, absent=12)
    bits, length = pc.serialize(m, 64, 63)
    assert length == sum(pc.register_widths(64, 63).values())
    assert pc.deserialize(bits, 64, 63) == m
