import dataclasses
import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from griddisperse import protocol_crash as pc
from griddisperse import sim_engine as se
from griddisperse.campaign import random_config, trial_rng
from griddisperse.errors import ConfigError, ParseError
from griddisperse.grid import GridSpec
from griddisperse.sim_engine import CrashEvent, SimConfig, config_from_dict, run, run_with_state

G4 = GridSpec(4, 4)
PILE = tuple((i, (0, 0)) for i in range(16))


def cfg4(**kw):
    fields = dict(grid=G4, mode="SquareCrash", robots=PILE)
    fields.update(kw)
    return SimConfig(**fields)


def test_pile_on_4x4():
    rep = run(cfg4())
    assert rep.dispersed and rep.rounds_used <= 28
    assert rep.live_robot_count == 16


def test_everyone_crashes_at_start():
    rep = run(cfg4(crash_schedule=tuple(CrashEvent(i, 0) for i in range(16))))
    assert rep.dispersed and rep.violations == []
    assert rep.live_robot_count == 0


def test_duplicate_id_names_the_field():
    robots = ((0, (0, 0)), (1, (0, 0)), (2, (0, 0)), (1, (1, 1)))
    with pytest.raises(ConfigError) as info:
        SimConfig(G4, "SquareCrash", robots)
    assert info.value.path == "robots[3].id"


@pytest.mark.parametrize(
    "change,path",
    [
        (dict(byzantine_ids=frozenset({1})), "byzantine_ids"),
        (dict(robots=((0, (4, 0)),)), "robots[0].start"),
        (dict(robots=tuple((i, (0, 0)) for i in range(17))), "robots"),
        (dict(crash_schedule=(CrashEvent(99, 0),)), "crash_schedule[0].robot"),
        (dict(crash_schedule=(CrashEvent(1, 0), CrashEvent(1, 2))), "crash_schedule[1].robot"),
        (dict(crash_schedule=(CrashEvent(1, 0, "Lunch"),)), "crash_schedule[0].substep"),
        (dict(mode="Hexagonal"), "mode"),
    ],
)
def test_config_errors(change, path):
    with pytest.raises(ConfigError) as info:
        cfg4(**change)
    assert info.value.path == path


def test_square_mode_needs_square_grid():
    with pytest.raises(ConfigError):
        SimConfig(GridSpec(4, 6), "SquareCrash", ((0, (0, 0)),))


def test_config_dict_round_trip():
    cfg = cfg4(crash_schedule=(CrashEvent(3, 5, "BeforeMove"),), seed=9)
    assert config_from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_after_communicate_crash_is_seen_but_does_not_move():
    seen = []

    def watcher(view, rid):
        seen.append((view.round, {m.id for m in view.observation.colocated}))
        return None, pc.STAY

    crashes = (CrashEvent(5, 0, "AfterCommunicate"), CrashEvent(6, 0, "StartOfRound"))
    cfg = SimConfig(G4, "SquareByz", PILE, byzantine_ids=frozenset({1}), crash_schedule=crashes, trace=True)
    state = se.initial_state(cfg)
    se.step_round(state, watcher)
    se.step_round(state, watcher)
    assert 5 in seen[0][1] and 6 not in seen[0][1]
    assert 5 not in seen[1][1]
    assert state.positions[5] == (0, 0)
    assert [r for r in state.trace if r.robot == 5] == [r for r in state.trace if r.robot == 5 and r.round == 0]


def test_crashed_robot_never_moves_again():
    cfg = cfg4(crash_schedule=(CrashEvent(2, 3, "BeforeMove"),), trace=True)
    _, state = run_with_state(cfg)
    rows = [r for r in state.trace if r.robot == 2]
    assert rows[-1].round == 3 and rows[-1].crashed
    assert all(r.round <= 3 for r in rows)


def test_start_of_round_crash_hides_robot():
    # robot 0 (lowest id) crashes before anyone sees it, so robot 1 takes rank 0
    cfg = cfg4(crash_schedule=(CrashEvent(0, 0, "StartOfRound"),))
    rep, state = run_with_state(cfg)
    assert rep.dispersed and 0 not in state.live


def test_synchrony_round_counters():
    cfg = SimConfig(GridSpec(5, 5), "SquareCrash", tuple((i, (i % 5, i // 5)) for i in range(25)))
    state = se.initial_state(cfg)
    while not se.all_settled(state):
        se.step_round(state)
        for rid in state.live - state.settled:
            assert state.memories[rid].round_ctr == state.round


def test_settled_memory_is_frozen():
    cfg = cfg4()
    state = se.initial_state(cfg)
    frozen = {}
    while not se.all_settled(state):
        se.step_round(state)
        for rid in state.settled:
            snap = dataclasses.astuple(state.memories[rid])
            assert frozen.setdefault(rid, snap) == snap


def test_memory_example_fresh_crash():
    assert se.memory_bits(pc.init_memory(15), 16, 15) <= 64


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(pc.MODES))
def test_determinism(seed, mode):
    cfg = random_config(trial_rng(seed, 0), mode, 36, seed=seed)
    a, b = run(cfg), run(cfg)
    assert a.to_json() == b.to_json()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_evaluation_order_unobservable(seed):
    cfg = random_config(trial_rng(seed, 1), "SquareCrash", 25, seed=seed)
    rng = random.Random(seed)
    a, b = se.initial_state(cfg), se.initial_state(cfg)
    for _ in range(cfg.effective_max_rounds()):
        if se.all_settled(a):
            break
        order = sorted(a.live)
        rng.shuffle(order)
        se.step_round(a)
        se.step_round(b, order=order)
        assert a.positions == b.positions
        assert a.memories == b.memories
    assert a.hasher.hexdigest() == b.hasher.hexdigest()


def test_trace_flag_does_not_change_hash():
    assert run(cfg4()).trace_hash == run(cfg4(trace=True)).trace_hash


def test_trace_file_round_trip(tmp_path):
    rep, state = run_with_state(cfg4(trace=True))
    path = tmp_path / "t.jsonl"
    se.write_trace(path, rep, state.trace)
    header, records = se.read_trace(path)
    assert header == {"schema_version": se.SCHEMA_VERSION, "trace_hash": rep.trace_hash}
    assert records == state.trace
    for line in path.read_text().splitlines()[1:3]:
        assert set(json.loads(line)) == {"round", "substep", "robot", "row", "col", "action", "crashed", "memory_bits"}


def test_one_record_per_live_robot_per_round():
    rep, state = run_with_state(cfg4(trace=True, crash_schedule=(CrashEvent(4, 6),)))
    per_round = {}
    for r in state.trace:
        per_round.setdefault(r.round, []).append(r.robot)
    assert per_round[0] == list(range(16))
    assert 4 in per_round[6] and 4 not in per_round[7]
    assert len(per_round[7]) == 15


def test_read_trace_reports_line(tmp_path):
    rep, state = run_with_state(cfg4(trace=True))
    path = tmp_path / "t.jsonl"
    se.write_trace(path, rep, state.trace)
    lines = path.read_text().splitlines()
    lines[4] = "{not json"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as info:
        se.read_trace(path)
    assert info.value.line == 5


def test_report_json_fields():
    d = json.loads(run(cfg4()).to_json())
    for key in ("dispersed", "rounds_used", "max_memory_bits", "violations", "live_robot_count", "trace_hash", "config", "schema_version"):
        assert key in d
    assert len(d["trace_hash"]) == 16


def test_strategy_lookup_names():
    from griddisperse.adversaries import SCRIPTED, byz_strategy_lookup

    for name in SCRIPTED:
        assert callable(byz_strategy_lookup(name))
    with pytest.raises(KeyError):
        byz_strategy_lookup("teleport")


def test_stay_put_adversary_keeps_position():
    robots = tuple((i, (i // 4, i % 4)) for i in range(16))
    cfg = SimConfig(G4, "SquareByz", robots, byzantine_ids=frozenset({5}), trace=True)
    _, state = run_with_state(cfg)
    assert {(r.row, r.col) for r in state.trace if r.robot == 5} == {(1, 1)}
