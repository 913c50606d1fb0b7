from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sitest.dsl import parse_scenario, parse_script
from sitest.scenario import ALL
from sitest.sim import (
    DEFAULT_CONFIG,
    Execution,
    GroundTruthScript,
    NO_NOISE,
    NoiseConfig,
    Occlusion,
    ScheduleEntry,
    ScriptError,
    Track,
    TrackEntry,
    World,
    derive_predicates,
    in_cone,
    quantize_speed,
    simulate,
)
from sitest.symbolic import Atom, Const, Cube, Num, Substitution, Var

F = Fraction


def vec(x, y):
    return (F(x), F(y))


def load(fixtures, name, seed=None):
    path = fixtures / name
    return parse_script(path.read_bytes(), str(path), seed=seed)


# -- geometry


def test_cone_boundary_is_excluded():
    # (1, 1) seen from the origin moving along x sits exactly on the 45 degree edge.
    assert not in_cone(vec(0, 0), vec(1, 0), vec(1, 1), F(45))
    assert in_cone(vec(0, 0), vec(1, 0), vec(10, 9), F(45))
    assert in_cone(vec(0, 0), vec(1, 1), vec(5, 5), F(30))


def test_cone_needs_motion_and_distance():
    assert not in_cone(vec(0, 0), vec(0, 0), vec(5, 0), F(30))
    assert not in_cone(vec(0, 0), vec(1, 0), vec(0, 0), F(30))
    assert not in_cone(vec(0, 0), vec(1, 0), vec(-5, 0), F(30))


def test_quantize_speed():
    assert quantize_speed(vec(0, 0), DEFAULT_CONFIG) == 0
    assert quantize_speed(vec(0, -2), DEFAULT_CONFIG) == F(72, 10)
    assert quantize_speed(vec(3, 4), DEFAULT_CONFIG) == 18


def test_derived_predicates():
    world = World(
        (
            Track("P1", (TrackEntry(1, vec(0, 4), vec(0, -1)),)),
            Track("V1", (TrackEntry(1, vec(0, 0)),)),
        ),
        (("exit", vec(40, 0)),),
    )
    atoms = derive_predicates(world, 1).atoms
    assert Atom("speed", (Const("V1"), Num(F(0), "km/h"))) in atoms
    assert Atom("getting-closer-to", (Const("P1"), Const("V1"))) in atoms
    assert Atom("close-to", (Const("P1"), Const("V1"))) in atoms
    # A parked vehicle approaches nothing.
    assert not any(a.predicate == "getting-closer-to" and a.args[0] == Const("V1") for a in atoms)


def test_track_integrates_and_disappears():
    tr = Track("A", (TrackEntry(1, vec(0, 0), vec(1, 2)), TrackEntry(3, gone=True)))
    assert tr.states(5) == {1: (vec(0, 0), vec(1, 2)), 2: (vec(1, 2), vec(1, 2))}


# -- scripts


def test_empty_script():
    assert simulate(GroundTruthScript()).steps == ()


def test_noise_config_validation():
    with pytest.raises(ScriptError):
        NoiseConfig(drop_rate=F(3, 2), seed=1)
    with pytest.raises(ScriptError):
        NoiseConfig(drop_rate=F(1, 5))
    assert NoiseConfig(drop_rate=0).drop_rate == 0


def _script(plan, schedule, bindings=None):
    return GroundTruthScript((Execution(plan, Substitution(bindings or {}), tuple(schedule)),))


@pytest.mark.parametrize(
    "script, message",
    [
        (_script("nope", []), "unknown plan"),
        (_script("vehicle-departure", [], {Var("q"): Const("A")}), "not a variable"),
        (_script("vehicle-departure", [ScheduleEntry(1, frozenset({"p9"}))]), "unknown place"),
        (_script("vehicle-departure", [ScheduleEntry(1, frozenset({"p3"}))]), "not reachable"),
        (
            _script("vehicle-departure", [ScheduleEntry(1, frozenset({"p1", "p2"})), ScheduleEntry(2, frozenset({"p4"}))]),
            "not one firing away",
        ),
        (
            _script("vehicle-departure", [ScheduleEntry(2, frozenset({"p1", "p2"})), ScheduleEntry(2, None)]),
            "must increase",
        ),
        (
            _script("vehicle-departure", [ScheduleEntry(1, frozenset({"p1", "p2"}), "moving")]),
            "not a tolerance activity",
        ),
    ],
)
def test_check_script_errors(parking, script, message):
    with pytest.raises(ScriptError, match=message):
        simulate(script, NO_NOISE, parking)


def test_noise_free_simulation_matches_fixture(fixtures):
    sf = load(fixtures, "departure.sim")
    sc = simulate(sf.script, sf.noise, sf.library, sf.config)
    assert sc == parse_scenario((fixtures / "departure.obs").read_text())
    assert [s.time for s in sc.steps] == list(range(1, 9))


def test_noise_free_fidelity(fixtures):
    # Every non-geometric kernel atom of the scheduled activities is observed.
    sf = load(fixtures, "departure.sim")
    sc = simulate(sf.script, sf.noise, sf.library, sf.config)
    obs = {s.time: s.obs.atoms for s in sc.steps}
    assert Atom("type", (Const("P1"), Const("pedestrian"))) in obs[1]
    assert Atom("type", (Const("V1"), Const("vehicle"))) in obs[7]
    assert Atom("speed", (Const("P1"), Num(F(0), "km/h"))) in obs[2]
    assert not any(Const("P1") in a.args for a in obs[8])


def test_fictitious_objects_only_add(fixtures):
    clean = load(fixtures, "departure.sim")
    dog = load(fixtures, "departure_dog.sim")
    a = simulate(clean.script, clean.noise, clean.library)
    b = simulate(dog.script, dog.noise, dog.library)
    for x, y in zip(a.steps, b.steps):
        assert x.obs.atoms <= y.obs.atoms
        assert all(Const("D1") in t.args for t in y.obs.atoms - x.obs.atoms)


def test_seeded_drops_are_deterministic(fixtures):
    sf = load(fixtures, "departure.sim")
    noise = NoiseConfig(drop_rate=F(1, 5), seed=3)
    first = simulate(sf.script, noise, sf.library)
    assert simulate(sf.script, noise, sf.library) == first
    other = simulate(sf.script, NoiseConfig(drop_rate=F(1, 5), seed=4), sf.library)
    assert other != first


@given(
    st.integers(1, 8),
    st.integers(0, 3),
    st.sets(st.sampled_from(["type", "speed", "close-to", "getting-closer-to"])),
    st.sets(st.sampled_from(["P1", "V1"])),
)
@settings(max_examples=50, deadline=None)
def test_occlusion_only_hides(parking, start, length, preds, objs):
    script = GroundTruthScript(
        world=World((Track("P1", (TrackEntry(1, vec(0, 12), vec(0, -2)),)), Track("V1", (TrackEntry(1, vec(0, 0)),)))),
        horizon=(1, 8),
    )
    occ = Occlusion(start, start + length, frozenset(preds), frozenset(objs))
    clean = simulate(script, NO_NOISE, parking)
    hidden = simulate(script, NoiseConfig(occlusions=(occ,)), parking)
    for a, b in zip(clean.steps, hidden.steps):
        assert b.obs.atoms <= a.obs.atoms
        if occ.covers(a.time):
            for atom in b.obs.atoms:
                assert atom.predicate not in preds
                assert not any(c.symbol in objs for c in atom.args if isinstance(c, Const))
            if preds:
                assert b.mask != ALL and not any(b.mask.shows(p) for p in preds)
        else:
            assert b == a
