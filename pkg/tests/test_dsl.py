from fractions import Fraction

import pytest
from hypothesis import given, settings

from fuzz import run_fuzz
from strategies import libraries
from sitest.dsl import (
    ParseFailed,
    check_library,
    check_scenario,
    check_script,
    parse_library,
    parse_scenario,
    parse_script,
    serialize,
    serialize_scenario,
)
from sitest.scenario import ALL, ObservabilityMask
from sitest.symbolic import Atom, Const, Constraint, Cube, Interval, Num, Var

def codes(diags):
    return [d.code for d in diags]


# -- libraries


def test_parse_activity_with_tolerance():
    lib = parse_library(
        """
        predicate type/2, speed/2;
        activity walking {
          kernel: (type ?x pedestrian) (speed ?x ?v);
          tolerance: constraints { ?v <= 8km/h };
        }
        """
    )
    act = lib.activities["walking"]
    x, v = Var("x"), Var("v")
    assert act.kernel == Cube.of(Atom("type", (x, Const("pedestrian"))), Atom("speed", (x, v)))
    assert act.tolerance_constraints == {Constraint(v, "<=", Num(Fraction(8), "km/h"))}
    assert lib.predicates == {"type": 2, "speed": 2}


def test_parse_interval_and_decimal():
    lib = parse_library("predicate s/2;\nactivity a { kernel: (s ?x ?v) { ?v in [-1.5, 2.25m] }; }\n")
    (c,) = lib.activities["a"].kernel.constraints
    assert c.right == Interval(Num(Fraction(-3, 2)), Num(Fraction(9, 4), "m"))


def test_fixture_round_trips(fixtures):
    lib = parse_library((fixtures / "parking.plan").read_text())
    text = serialize(lib)
    assert parse_library(text) == lib
    assert serialize(parse_library(text)) == text


def test_crlf_line_endings(fixtures):
    text = (fixtures / "parking.plan").read_text()
    assert parse_library(text.replace("\n", "\r\n")) == parse_library(text)


def test_arity_error_points_at_atom():
    lib, diags = check_library("predicate type/2;\nactivity a {\n  kernel: (type ?x);\n}\n", "f.plan")
    assert lib is None
    (d,) = diags
    assert (d.code, d.span.line, d.span.column, d.span.length) == ("arity", 3, 11, 9)
    assert str(d) == "f.plan:3:11: error: activity a kernel: type expects 2 argument(s), got 1"


def test_recovery_reports_every_error():
    src = "predicate p/1;\nactivity a { kernel: (p ?x) @; }\nactivity b { kernel: (q ?x); }\nplan c { places: b; initial: [zz]; }\n"
    lib, diags = check_library(src, "f.plan")
    assert lib is None
    assert codes(diags) == ["lex", "predicate", "reference"]
    assert [d.span.line for d in diags] == [2, 3, 4]


def test_unbalanced_braces_recover_at_next_statement():
    src = "predicate p/1;\nactivity a { kernel: (p ?x);\nactivity b { kernel: (p ?x) { ?y < 3 }; }\n"
    _, diags = check_library(src, "f.plan")
    assert "constraint" in codes(diags)


def test_duplicates_and_sorted_output():
    src = "activity a { kernel: (p ?x); }\nactivity a { kernel: (p ?x); }\n"
    _, diags = check_library(src, "f.plan")
    assert codes(diags) == ["predicate", "duplicate"]


def test_unterminated_block():
    _, diags = check_library("plan x {", "f.plan")
    assert str(diags[0]) == "f.plan:1:6: error: unterminated plan block"


def test_invalid_utf8():
    lib, diags = check_library(b"predicate p/1;\n\xff", "f.plan")
    assert lib is None
    assert [(d.code, d.span.line) for d in diags] == [("encoding", 2)]


def test_refines_cycle_diagnostic(fixtures):
    lib, diags = check_library((fixtures / "cycle.plan").read_bytes(), "cycle.plan")
    assert lib is None
    assert codes(diags) == ["cycle"]


def test_parse_failed_carries_diagnostics():
    with pytest.raises(ParseFailed) as e:
        parse_library("activity a {")
    assert e.value.diagnostics


@given(libraries())
@settings(max_examples=200, deadline=None)
def test_library_round_trip(lib):
    text = serialize(lib)
    back = parse_library(text)
    assert back == lib
    assert serialize(back) == text


# -- scenarios


def test_parse_scenario_with_mask():
    sc = parse_scenario("t=1 visible type\nt=2 obs (type P1 pedestrian) (speed P1 5km/h)\n")
    assert [s.time for s in sc.steps] == [1, 2]
    assert sc.steps[0].obs == Cube()
    assert sc.steps[1].mask == ObservabilityMask.only(["type"])
    assert Atom("speed", (Const("P1"), Num(Fraction(5), "km/h"))) in sc.steps[1].obs.atoms


def test_scenario_round_trip(fixtures):
    for name in ("departure.obs", "departure_dog.obs", "case_e.obs"):
        text = (fixtures / name).read_text()
        sc = parse_scenario(text)
        assert parse_scenario(serialize_scenario(sc)) == sc


def test_scenario_visible_line_round_trips():
    sc = parse_scenario("t=1 obs (p a)\nt=2 visible p\nt=2 obs (p b)\nt=3 visible all\n")
    assert sc.steps[2].mask == ALL
    assert parse_scenario(serialize_scenario(sc)) == sc


@pytest.mark.parametrize(
    "text, code, message",
    [
        ("t=1 obs (speed ?x 1)\n", "ground", "observations must be ground"),
        ("t=1 obs (type P1)\n", "arity", "type expects 2 argument(s), got 1"),
        ("t=1 obs (colour P1 red)\n", "predicate", "undeclared predicate 'colour'"),
        ("t=2 obs (speed P1 1)\nt=1 obs (speed P1 2)\n", "order", "time 1 goes backwards (after 2)"),
        ("t=1 obs (speed P1 1)\nt=1 obs (speed P1 2)\n", "order", "second observation at t=1"),
        ("t=1.5 obs\n", "syntax", "time index must be an integer"),
        ("x=1\n", "syntax", "expected 't=<n>', found 'x'"),
    ],
)
def test_scenario_errors(text, code, message):
    sc, diags = check_scenario(text, "s.obs", {"type": 2, "speed": 2})
    assert sc is None
    assert (diags[0].code, diags[0].message) == (code, message)


def test_empty_scenario():
    assert parse_scenario("# nothing\n").steps == ()


# -- scripts


def test_parse_fixture_script(fixtures):
    sf = parse_script((fixtures / "departure.sim").read_bytes(), str(fixtures / "departure.sim"))
    assert "vehicle-departure" in sf.library.plans
    assert sf.script.horizon == (1, 8)
    assert sf.noise.fictitious == ()


def test_script_seed_override(fixtures):
    path = fixtures / "departure_dog.sim"
    assert parse_script(path.read_bytes(), str(path), seed=42).noise.seed == 42


def test_script_missing_library(tmp_path):
    script = tmp_path / "x.sim"
    script.write_text('library "nowhere.plan";\n')
    result, diags = check_script(script.read_bytes(), str(script))
    assert result is None
    assert codes(diags)[0] == "io"


# -- fuzzing


def test_fuzz_small():
    run_fuzz(2000, seed=1)
