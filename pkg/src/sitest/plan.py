"""Activity and plan prototypes over safe (1-bounded) Petri nets."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional

from .symbolic import Atom, Constraint, Cube, Var

Marking = frozenset  # set of place ids; safe nets never need a multiset


class NotEnabledError(ValueError):
    """Firing a transition whose pre-set is not marked."""


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int
    column: int
    length: int

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.column}"


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    message: str
    span: Optional[SourceSpan] = None
    code: str = ""
    subject: tuple = ()  # e.g. ("plan", "vehicle-departure"); used to attach spans

    def __post_init__(self):
        if not self.message:
            raise ValueError("diagnostic message must be nonempty")

    def __str__(self) -> str:
        where = f"{self.span}: " if self.span else ""
        return f"{where}{self.severity}: {self.message}"


@dataclass(frozen=True)
class ActivityPrototype:
    id: str
    kernel: Cube
    tolerance_constraints: frozenset = frozenset()
    tolerance_atoms: frozenset = frozenset()

    def __post_init__(self):
        for name in ("tolerance_constraints", "tolerance_atoms"):
            v = getattr(self, name)
            if not isinstance(v, frozenset):
                object.__setattr__(self, name, frozenset(v))

    @property
    def tolerance(self) -> Cube:
        return Cube(self.tolerance_atoms, self.tolerance_constraints)

    def variables(self) -> set:
        return self.kernel.variables() | self.tolerance.variables()


@dataclass(frozen=True)
class Transition:
    pre: frozenset
    post: frozenset
    event: Cube = field(default_factory=Cube)

    def __post_init__(self):
        for name in ("pre", "post"):
            v = getattr(self, name)
            if not isinstance(v, frozenset):
                object.__setattr__(self, name, frozenset(v))


@dataclass(frozen=True)
class PlanPrototype:
    id: str
    places: Mapping  # place id -> activity id
    transitions: tuple
    initial_marking: frozenset
    tolerance_activities: frozenset = frozenset()
    refines: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "places", dict(self.places))
        object.__setattr__(self, "transitions", tuple(self.transitions))
        for name in ("initial_marking", "tolerance_activities", "refines"):
            v = getattr(self, name)
            if not isinstance(v, frozenset):
                object.__setattr__(self, name, frozenset(v))

    def __hash__(self):
        return hash((self.id, self.transitions, self.initial_marking))


@dataclass(frozen=True)
class PlanLibrary:
    predicates: Mapping = field(default_factory=dict)  # name -> arity
    activities: Mapping = field(default_factory=dict)  # id -> ActivityPrototype
    plans: Mapping = field(default_factory=dict)  # id -> PlanPrototype

    def __post_init__(self):
        for name in ("predicates", "activities", "plans"):
            object.__setattr__(self, name, dict(getattr(self, name)))

    def plan(self, plan_id: str) -> PlanPrototype:
        try:
            return self.plans[plan_id]
        except KeyError:
            raise KeyError(f"unknown plan {plan_id!r}") from None

    def activity_of(self, plan: PlanPrototype, place: str) -> ActivityPrototype:
        return self.activities[plan.places[place]]

    def plan_variables(self, plan: PlanPrototype) -> set:
        out: set = set()
        for act in self._plan_activities(plan):
            out |= act.variables()
        for t in plan.transitions:
            out |= t.event.variables()
        return out

    def object_variables(self, plan: PlanPrototype) -> set:
        """Variables in first-argument position of any atom of the plan.

        Only these keep their binding from step to step; attribute values
        (speeds, makes) are re-bound at every observation.
        """
        out: set = set()
        for act in self._plan_activities(plan):
            for a in act.kernel.atoms | act.tolerance_atoms:
                if a.args and isinstance(a.args[0], Var):
                    out.add(a.args[0])
        for t in plan.transitions:
            for a in t.event.atoms:
                if a.args and isinstance(a.args[0], Var):
                    out.add(a.args[0])
        return out

    def _plan_activities(self, plan: PlanPrototype) -> Iterator[ActivityPrototype]:
        for aid in sorted(set(plan.places.values()) | plan.tolerance_activities):
            act = self.activities.get(aid)
            if act is not None:
                yield act


# ---------------------------------------------------------------------------
# Net semantics
# ---------------------------------------------------------------------------


def enabled(p: PlanPrototype, m: Marking) -> list:
    """Indices of transitions whose pre-set is marked, in declaration order."""
    return [i for i, t in enumerate(p.transitions) if t.pre <= m]


def fire(p: PlanPrototype, m: Marking, t: int) -> Marking:
    tr = p.transitions[t]
    if not tr.pre <= m:
        raise NotEnabledError(f"transition {t} of {p.id} is not enabled at {sorted(m)}")
    return frozenset((m - tr.pre) | tr.post)


def successors(p: PlanPrototype, m: Marking) -> list:
    """``(transition, marking)`` pairs for the stay branch and each firing.

    The stay branch comes first with transition ``None``.  Firings that
    reproduce an already listed marking are skipped.
    """
    out = [(None, frozenset(m))]
    seen = {frozenset(m)}
    for i in enabled(p, m):
        nm = fire(p, m, i)
        if nm not in seen:
            seen.add(nm)
            out.append((i, nm))
    return out


def reachable_one_step(p: PlanPrototype, m: Marking) -> frozenset:
    return frozenset(nm for _, nm in successors(p, m))


def reachable_markings(p: PlanPrototype, limit: int = 10000) -> list:
    """All markings reachable from the initial one, breadth-first order."""
    start = frozenset(p.initial_marking)
    seen = {start}
    order = [start]
    queue = deque([start])
    while queue and len(order) < limit:
        m = queue.popleft()
        for i in enabled(p, m):
            nm = fire(p, m, i)
            if nm not in seen:
                seen.add(nm)
                order.append(nm)
                queue.append(nm)
    return order


def marking_key(m: Marking) -> tuple:
    return tuple(sorted(m))


# ---------------------------------------------------------------------------
# Specificity
# ---------------------------------------------------------------------------


def more_specific(lib: PlanLibrary, a: str, b: str) -> bool:
    """True iff ``a`` (transitively) refines ``b``."""
    lib.plan(a)
    lib.plan(b)
    seen = set()
    stack = list(lib.plans[a].refines)
    while stack:
        cur = stack.pop()
        if cur == b:
            return True
        if cur in seen or cur not in lib.plans:
            continue
        seen.add(cur)
        stack.extend(lib.plans[cur].refines)
    return False


def minimal_plans(lib: PlanLibrary, ids: Iterable[str]) -> list:
    ids = sorted(set(ids))
    return [a for a in ids if not any(b != a and more_specific(lib, a, b) for b in ids)]


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _err(message: str, code: str, subject: tuple) -> Diagnostic:
    return Diagnostic("error", message, None, code, subject)


def _check_atom_arity(lib, atom: Atom, where: str, subject: tuple, out: list) -> None:
    arity = lib.predicates.get(atom.predicate)
    if arity is None:
        out.append(_err(f"{where}: undeclared predicate {atom.predicate!r}", "predicate", subject))
    elif arity != atom.arity:
        out.append(
            _err(
                f"{where}: {atom.predicate} expects {arity} argument(s), got {atom.arity}",
                "arity",
                subject + (atom,),
            )
        )


def _check_cube(lib, cube: Cube, where: str, subject: tuple, out: list, extra_vars=()) -> None:
    for atom in cube.sorted_atoms():
        _check_atom_arity(lib, atom, where, subject, out)
    bound = cube.atom_variables() | set(extra_vars)
    for c in cube.sorted_constraints():
        free = c.variables() - bound
        if free:
            names = ", ".join(sorted(str(v) for v in free))
            out.append(_err(f"{where}: constraint {c} uses {names} bound by no atom", "constraint", subject))


def validate(lib: PlanLibrary) -> list:
    """Every invariant violation of the library; empty iff well-formed."""
    out: list = []

    for aid in sorted(lib.activities):
        act = lib.activities[aid]
        subj = ("activity", aid)
        if not act.kernel.atoms:
            out.append(_err(f"activity {aid}: kernel is empty", "kernel", subj))
        _check_cube(lib, act.kernel, f"activity {aid} kernel", subj, out)
        _check_cube(
            lib, act.tolerance, f"activity {aid} tolerance", subj, out, extra_vars=act.kernel.atom_variables()
        )

    for pid in sorted(lib.plans):
        p = lib.plans[pid]
        subj = ("plan", pid)
        for place in sorted(p.places):
            aid = p.places[place]
            if aid not in lib.activities:
                out.append(_err(f"plan {pid}: place {place} refers to unknown activity {aid!r}", "reference", subj))
        dangling = False
        for i, t in enumerate(p.transitions):
            for place in sorted((t.pre | t.post) - set(p.places)):
                out.append(_err(f"plan {pid}: transition {i} refers to unknown place {place!r}", "reference", subj))
                dangling = True
            _check_cube(lib, t.event, f"plan {pid} transition {i} event", subj, out)
        for place in sorted(p.initial_marking - set(p.places)):
            out.append(_err(f"plan {pid}: initial marking names unknown place {place!r}", "reference", subj))
            dangling = True
        kernel_acts = set(p.places.values())
        for aid in sorted(p.tolerance_activities):
            if aid not in lib.activities:
                out.append(_err(f"plan {pid}: unknown tolerance activity {aid!r}", "reference", subj))
            elif aid in kernel_acts:
                out.append(_err(f"plan {pid}: tolerance activity {aid} is also a kernel activity", "tolerance", subj))
        for ref in sorted(p.refines):
            if ref not in lib.plans:
                out.append(_err(f"plan {pid}: refines unknown plan {ref!r}", "reference", subj))
        if not p.places:
            out.append(_err(f"plan {pid}: no places", "structure", subj))
        if dangling or not p.places:
            continue
        out.extend(_check_net(p))

    out.extend(_refines_cycles(lib))
    return out


def _check_net(p: PlanPrototype, limit: int = 10000) -> list:
    out = []
    subj = ("plan", p.id)
    start = frozenset(p.initial_marking)
    seen = {start}
    queue = deque([start])
    fired: set = set()
    unsafe = None
    while queue and len(seen) < limit:
        m = queue.popleft()
        for i in enabled(p, m):
            t = p.transitions[i]
            fired.add(i)
            clash = (m - t.pre) & t.post
            if clash and unsafe is None:
                unsafe = (i, sorted(m), sorted(clash))
            nm = fire(p, m, i)
            if nm not in seen:
                seen.add(nm)
                queue.append(nm)
    if unsafe is not None:
        i, m, clash = unsafe
        out.append(
            _err(
                f"plan {p.id}: not safe, transition {i} at {m} puts a second token on {', '.join(clash)}",
                "unsafe",
                subj,
            )
        )
    marked = set().union(*seen) if seen else set()
    for place in sorted(set(p.places) - marked):
        out.append(_err(f"plan {p.id}: place {place} is never marked", "dead", subj))
    for i in range(len(p.transitions)):
        if i not in fired:
            out.append(_err(f"plan {p.id}: transition {i} can never fire", "dead", subj))
    return out


def _refines_cycles(lib: PlanLibrary) -> list:
    out = []
    color: dict = {}
    reported: set = set()

    def visit(pid: str, path: list) -> None:
        color[pid] = 1
        path.append(pid)
        for ref in sorted(lib.plans[pid].refines):
            if ref not in lib.plans:
                continue
            if color.get(ref) == 1:
                cycle = path[path.index(ref):]
                key = frozenset(cycle)
                if key not in reported:
                    reported.add(key)
                    text = " -> ".join(cycle + [ref])
                    out.append(_err(f"refines cycle: {text}", "cycle", ("plan", ref)))
            elif ref not in color:
                visit(ref, path)
        path.pop()
        color[pid] = 2

    for pid in sorted(lib.plans):
        if pid not in color:
            visit(pid, [])
    return out
