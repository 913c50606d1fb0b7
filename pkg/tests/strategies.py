"""Hypothesis strategies for terms, cubes and plan libraries."""

from fractions import Fraction

from hypothesis import strategies as st

from sitest.plan import ActivityPrototype, PlanLibrary, PlanPrototype, Transition
from sitest.symbolic import Atom, Const, Constraint, Cube, Interval, Num, Substitution, Var

PREDICATES = {"p": 1, "q": 2, "r": 2}
CONSTANTS = [Const("a"), Const("b"), Const("c")]
NUMBERS = [Num(Fraction(n)) for n in (0, 1, 2)]
VARIABLES = [Var("x"), Var("y"), Var("z")]

ground_terms = st.sampled_from(CONSTANTS + NUMBERS)
terms = st.sampled_from(CONSTANTS + NUMBERS + VARIABLES)


@st.composite
def atoms(draw, term_strategy=terms):
    pred = draw(st.sampled_from(sorted(PREDICATES)))
    args = tuple(draw(term_strategy) for _ in range(PREDICATES[pred]))
    return Atom(pred, args)


@st.composite
def ground_cubes(draw, max_atoms=4):
    return Cube(frozenset(draw(st.lists(atoms(ground_terms), max_size=max_atoms))))


@st.composite
def pattern_cubes(draw, max_atoms=4, constraints=True):
    """Pattern cubes; constraints only mention variables bound by atoms."""
    found = draw(st.lists(atoms(), min_size=0, max_size=max_atoms))
    cube_atoms = frozenset(found)
    bound = sorted({v for a in cube_atoms for v in a.variables()}, key=lambda v: v.name)
    cons = set()
    if constraints and bound:
        for _ in range(draw(st.integers(0, 2))):
            v = draw(st.sampled_from(bound))
            rel = draw(st.sampled_from(["=", "!=", "<", "<=", ">", ">=", "in"]))
            if rel == "in":
                lo = draw(st.integers(0, 2))
                hi = draw(st.integers(lo, 2))
                cons.add(Constraint(v, "in", Interval(Num(Fraction(lo)), Num(Fraction(hi)))))
            else:
                cons.add(Constraint(v, rel, draw(st.sampled_from(NUMBERS + bound))))
    return Cube(cube_atoms, frozenset(cons))


@st.composite
def substitutions(draw):
    chosen = draw(st.lists(st.sampled_from(VARIABLES), unique=True, max_size=3))
    return Substitution({v: draw(ground_terms) for v in chosen})


# -- plan libraries ---------------------------------------------------------

_NAMES = ["walk", "stop", "drive", "park", "board", "leave", "wait", "turn-left"]


@st.composite
def libraries(draw):
    """Random well-formed libraries: safe chain nets and an acyclic refines graph."""
    n_preds = draw(st.integers(1, 3))
    predicates = {f"pr{i}": draw(st.integers(1, 3)) for i in range(n_preds)}
    activities = {}
    n_acts = draw(st.integers(1, 4))
    for i in range(n_acts):
        kernel_atoms = set()
        for _ in range(draw(st.integers(1, 3))):
            pred = draw(st.sampled_from(sorted(predicates)))
            args = tuple(draw(st.sampled_from(VARIABLES[:2] + CONSTANTS[:2] + NUMBERS[:1])) for _ in range(predicates[pred]))
            if not any(isinstance(t, Var) for t in args):
                args = (Var("x"),) + args[1:]
            kernel_atoms.add(Atom(pred, args))
        bound = sorted({v for a in kernel_atoms for v in a.variables()}, key=lambda v: v.name)
        kernel_cons = set()
        if bound and draw(st.booleans()):
            kernel_cons.add(Constraint(draw(st.sampled_from(bound)), ">=", Num(Fraction(draw(st.integers(-3, 3)), 2), "m")))
        tol_cons = set()
        if bound and draw(st.booleans()):
            lo = draw(st.integers(0, 5))
            tol_cons.add(Constraint(bound[0], "in", Interval(Num(Fraction(lo)), Num(Fraction(lo + 3)))))
        tol_atoms = set()
        if draw(st.booleans()):
            pred = draw(st.sampled_from(sorted(predicates)))
            tol_atoms.add(Atom(pred, tuple(Var("t") for _ in range(predicates[pred]))))
        aid = _NAMES[i]
        activities[aid] = ActivityPrototype(
            aid, Cube(frozenset(kernel_atoms), frozenset(kernel_cons)), frozenset(tol_cons), frozenset(tol_atoms)
        )
    act_ids = sorted(activities)
    plans = {}
    for i in range(draw(st.integers(0, 3))):
        length = draw(st.integers(1, min(3, len(act_ids))))
        seq = draw(st.lists(st.sampled_from(act_ids), min_size=length, max_size=length, unique=True))
        places = {f"s{j}" if draw(st.booleans()) else a: a for j, a in enumerate(seq)}
        order = list(places)
        transitions = tuple(
            Transition(frozenset([order[j]]), frozenset([order[j + 1]]), Cube()) for j in range(len(order) - 1)
        )
        tol_acts = frozenset(a for a in act_ids if a not in seq and draw(st.booleans()))
        pid = f"plan{i}"
        refines = frozenset(f"plan{j}" for j in range(i) if draw(st.booleans()))
        plans[pid] = PlanPrototype(pid, places, transitions, frozenset([order[0]]), tol_acts, refines)
    return PlanLibrary(predicates, activities, plans)
