from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from needsense.errors import GripperOccupied, NoSkill, ObjectNotFound, ScanFailed
from needsense.model import ActionPlan, Move, Navigate, RobotConstraints, Use
from needsense.scenarios import load_world
from needsense.sim import (
    HELD,
    NoiseConfig,
    ObjectSpec,
    World,
    execute_plan,
    execute_primitive,
    monte_carlo_success,
    pooled_success,
    retrieve_skill,
    scan_for,
    task_trials,
)

from conftest import TASKS, fixture_plans, load_snapshot


def small_world():
    objects = (
        ObjectSpec("cup", "kitchen"),
        ObjectSpec("spoon", "kitchen"),
        ObjectSpec("sock", "bedroom", on_floor=True),
        ObjectSpec("bed", "bedroom", graspable=False),
        ObjectSpec("lamp", "bedroom", graspable=False, usable=True, use_effect="on"),
    )
    locations = {"kitchen": ("hall",), "hall": ("kitchen", "bedroom"), "bedroom": ("hall",)}
    return World(locations, objects, human="bedroom", robot="hall")


def checkpoints(steps) -> int:
    return sum({Navigate: 1, Move: 2, Use: 1}[type(s)] for s in steps)


# --- scan ----------------------------------------------------------------


def test_scan_underscore_name():
    assert scan_for(load_world(16), "water_bottle").name == "water bottle"


def test_scan_unknown():
    with pytest.raises(ObjectNotFound):
        scan_for(small_world(), "unicorn")


def test_scan_always_fails_at_one():
    for seed in range(20):
        with pytest.raises(ScanFailed):
            scan_for(small_world(), "cup", NoiseConfig(p_scan_fail=1.0), random.Random(seed))


def test_scan_token_subset():
    assert scan_for(small_world(), "the Cup").name == "cup"


# --- primitives ----------------------------------------------------------


def test_lamp_toggles_on():
    world = load_world(15)
    execute_primitive(world, Navigate("lamp"))
    execute_primitive(world, Use("lamp"))
    assert world.states["lamp"]["on"] is True
    execute_primitive(world, Use("lamp"))
    assert world.states["lamp"]["on"] is False


def test_blanket_ends_at_person():
    world = load_world(13)
    trace = execute_plan(world, fixture_plans(13)[0])
    assert trace.success
    assert trace.world.positions["blanket"] == world.human


def test_gripper_occupied():
    world = small_world()
    execute_primitive(world, Navigate("cup"))
    world.held = "spoon"
    with pytest.raises(GripperOccupied):
        execute_primitive(world, Move("cup", "person"))


def test_grasp_always_fails_at_one():
    steps = (Navigate("cup"), Move("cup", "person"), Navigate("lamp"), Use("lamp"))
    for seed in range(10):
        trace = execute_plan(small_world(), steps, NoiseConfig(p_grasp_fail=1.0), seed=seed)
        assert [s.ok for s in trace.steps] == [True, False]
        assert trace.steps[-1].reason == "grasp_failed"


def test_failed_place_leaves_object_held():
    trace = execute_plan(small_world(), (Navigate("cup"), Move("cup", "person")), NoiseConfig(p_place_fail=1.0))
    assert trace.steps[-1].reason == "place_failed"
    assert trace.world.held == "cup"
    assert trace.world.positions["cup"] == HELD


@pytest.mark.parametrize("steps, reason", [
    ((Navigate("sock"), Move("sock", "person")), "ground_pickup"),
    ((Navigate("bed"), Move("bed", "person")), "not_graspable"),
    ((Navigate("cup"), Use("cup")), "not_usable"),
    ((Move("cup", "person"),), "no_approach"),
    ((Navigate("lamp"), Move("cup", "person")), "not_adjacent"),
    ((Navigate("person"), Use("person")), "human_contact"),
    ((Navigate("unicorn"),), "object_not_found"),
])
def test_rejections(steps, reason):
    trace = execute_plan(small_world(), steps)
    assert not trace.success
    assert trace.steps[-1].reason == reason


def test_floor_reach_constraint():
    steps = (Navigate("sock"), Move("sock", "person"))
    assert execute_plan(small_world(), steps, constraints=RobotConstraints(can_reach_floor=True)).success


def test_unreachable_location():
    world = World({"a": (), "b": ()}, (ObjectSpec("cup", "b"),), human="a", robot="a")
    assert execute_plan(world, (Navigate("cup"),)).steps[-1].reason == "not_adjacent"


def test_empty_plan():
    with pytest.raises(ValueError):
        execute_plan(small_world(), ())
    with pytest.raises(ValueError):
        monte_carlo_success(small_world(), (), NoiseConfig(), 10)


def test_execute_plan_leaves_input_world_untouched():
    world = small_world()
    before = (dict(world.positions), world.robot, world.held)
    execute_plan(world, (Navigate("cup"), Move("cup", "person")))
    assert (dict(world.positions), world.robot, world.held) == before


def test_task1_trace_snapshot():
    trace = execute_plan(load_world(1), fixture_plans(1)[0])
    assert trace.success
    assert trace.to_jsonl() == load_snapshot("trace_task01_plan0.jsonl")
    assert trace.world.positions["water bottle"] == load_world(1).human


@pytest.mark.parametrize("task", TASKS)
def test_fixture_plans_succeed_without_noise(task):
    for plan in fixture_plans(task):
        assert execute_plan(load_world(task), plan).success, plan
        assert monte_carlo_success(load_world(task), plan, NoiseConfig(), 5) == 1.0


# --- noise and Monte Carlo ---------------------------------------------


def test_noise_validation():
    with pytest.raises(ValueError):
        NoiseConfig(p_scan_fail=1.5)
    assert NoiseConfig.parse("0.1") == NoiseConfig(0.1, 0.1, 0.1, 0.1)
    assert NoiseConfig.parse("0,0.2,0,0").p_grasp_fail == 0.2
    with pytest.raises(ValueError):
        NoiseConfig.parse("0.1,0.2")


def test_monte_carlo_matches_product():
    steps = (Navigate("cup"), Move("cup", "person"), Navigate("lamp"), Use("lamp"))
    rate = monte_carlo_success(small_world(), steps, NoiseConfig.parse("0.1"), 100_000, seed=3)
    assert abs(rate - 0.9 ** checkpoints(steps)) <= 0.01


def test_three_primitive_plan():
    steps = (Navigate("cup"), Move("cup", "person"), Use("lamp"))
    assert checkpoints(steps) == 4
    rate = monte_carlo_success(small_world(), steps, NoiseConfig.parse("0.1"), 100_000, seed=1)
    assert abs(rate - 0.9 ** 4) <= 0.01


def test_monte_carlo_requires_trials():
    with pytest.raises(ValueError):
        monte_carlo_success(small_world(), (Navigate("cup"),), NoiseConfig(), 0)


def test_monte_carlo_is_seeded():
    steps = (Navigate("cup"), Move("cup", "person"))
    noise = NoiseConfig.parse("0.3")
    assert monte_carlo_success(small_world(), steps, noise, 500, seed=9) == \
        monte_carlo_success(small_world(), steps, noise, 500, seed=9)


def test_monte_carlo_jobs_do_not_change_result():
    steps = (Navigate("cup"), Move("cup", "person"))
    noise = NoiseConfig.parse("0.2")
    assert monte_carlo_success(small_world(), steps, noise, 400, seed=2, jobs=2) == \
        monte_carlo_success(small_world(), steps, noise, 400, seed=2, jobs=1)


def test_pooled_table_counts():
    counts = [8, 9, 5, 8, 4, 10, 4, 10, 5, 10, 5, 9, 4, 7, 4, 9]
    rate = pooled_success((c, 10) for c in counts)
    assert sum(counts) == 111
    assert rate == 111 / 160
    assert round(100 * rate, 1) == 69.4


def test_pooled_rejects_bad_counts():
    with pytest.raises(ValueError):
        pooled_success([(11, 10)])
    with pytest.raises(ValueError):
        pooled_success([])


def test_task_trials_zero_noise():
    plans = fixture_plans(1)
    assert task_trials(load_world(1), plans, NoiseConfig(), 20) == (20, 20)


def test_task_trials_needs_every_plan():
    plans = [(Navigate("cup"), Move("cup", "person")), (Navigate("lamp"), Use("lamp"))]
    wins, n = task_trials(small_world(), plans, NoiseConfig(p_use_fail=1.0), 30)
    assert (wins, n) == (0, 30)


# --- skills --------------------------------------------------------------


def test_hair_dryer_uses_vacuum_demo():
    dryer = ObjectSpec("hair dryer", "bedroom", category="hair dryer")
    assert retrieve_skill(dryer, {"handheld vacuum": "demo-vac"}) == "demo-vac"


def test_exact_category_wins():
    mug = ObjectSpec("mug", "kitchen", category="mug")
    assert retrieve_skill(mug, {"cup": "demo-cup", "mug": "demo-mug"}) == "demo-mug"


def test_uncovered_category():
    with pytest.raises(NoSkill):
        retrieve_skill(ObjectSpec("anvil", "kitchen", category="anvil"), {"cup": "demo-cup"})
    with pytest.raises(ValueError):
        retrieve_skill(ObjectSpec("cup", "kitchen"), {})


def test_world_with_skill_library_blocks_unknown_objects():
    world = small_world()
    world.skills = {"spoon": "demo-spoon"}
    trace = execute_plan(world, (Navigate("cup"), Move("cup", "person")))
    assert trace.steps[-1].reason == "no_skill"


# --- world validation ----------------------------------------------------


def test_world_rejects_duplicate_names():
    with pytest.raises(ValueError):
        World({"a": ()}, (ObjectSpec("Water Bottle", "a"), ObjectSpec("water_bottle", "a")), "a", "a")


def test_usable_needs_effect():
    with pytest.raises(ValueError):
        ObjectSpec("lamp", "a", usable=True)


# --- properties ----------------------------------------------------------

NAMES = ["cup", "spoon", "sock", "bed", "lamp", "person", "unicorn"]
primitive = st.one_of(
    st.builds(Navigate, st.sampled_from(NAMES)),
    st.builds(Move, st.sampled_from(NAMES), st.sampled_from(NAMES)),
    st.builds(Use, st.sampled_from(NAMES)),
)
noise_st = st.builds(NoiseConfig, *(st.sampled_from([0.0, 0.2, 0.5]) for _ in range(4)))


@settings(max_examples=150, deadline=None)
@given(steps=st.lists(primitive, min_size=1, max_size=8), noise=noise_st, seed=st.integers(0, 10_000))
def test_conservation_and_single_gripper(steps, noise, seed):
    world = small_world()
    names = sorted(world.positions)
    rng = random.Random(seed)
    for step in steps:
        try:
            execute_primitive(world, step, noise, rng)
        except Exception as exc:  # noqa: BLE001 - any SimError ends the run
            assert exc.__class__.__module__ == "needsense.errors"
            break
        finally:
            assert sorted(world.positions) == names
            holding = [n for n, loc in world.positions.items() if loc == HELD]
            assert len(holding) <= 1
            assert holding == ([world.held] if world.held else [])


@settings(max_examples=60, deadline=None)
@given(steps=st.lists(primitive, min_size=1, max_size=6), noise=noise_st, seed=st.integers(0, 10_000))
def test_trace_determinism(steps, noise, seed):
    a = execute_plan(small_world(), steps, noise, seed=seed)
    b = execute_plan(small_world(), steps, noise, seed=seed)
    assert a.to_jsonl() == b.to_jsonl()
    assert a.success == all(s.ok for s in a.steps)


valid_plans = st.lists(
    st.sampled_from([
        (Navigate("cup"), Move("cup", "person")),
        (Navigate("spoon"), Move("spoon", "lamp")),
        (Navigate("lamp"), Use("lamp")),
        (Navigate("bed"),),
    ]),
    min_size=1, max_size=3,
)


@settings(max_examples=12, deadline=None)
@given(blocks=valid_plans, p=st.sampled_from([0.05, 0.1, 0.2]), seed=st.integers(0, 1000))
def test_monte_carlo_within_three_standard_errors(blocks, p, seed):
    steps = tuple(s for block in blocks for s in block)
    world = small_world()
    if not execute_plan(world, steps).success:
        return  # a block may have moved an object out of reach
    trials = 4000
    expected = (1 - p) ** checkpoints(steps)
    rate = monte_carlo_success(world, steps, NoiseConfig(p, p, p, p), trials, seed=seed)
    se = math.sqrt(expected * (1 - expected) / trials)
    assert abs(rate - expected) <= 3 * se + 1e-12
