"""Symbolic situation estimation.

One step of the loop turns the current :class:`Situation` into a prediction
(one branch per one-step-reachable marking of every live instance), projects
it through the observability mask, compares it with the observation, and
revises the situation.  Revision outcomes are labelled:

``a``  kernels matched, nothing left over
``b``  kernels matched, extra facts about objects already tracked
``c``  facts about objects nobody tracks yet (new instances are spawned)
``d``  extra facts linking a tracked object with a new one
``e``  no branch matched; the instance is retired and replaced

Every decision is written to a :class:`StepTrace` as one JSON record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Iterable, Optional

from .plan import (
    PlanLibrary,
    enabled,
    marking_key,
    minimal_plans,
    more_specific,
    reachable_markings,
    successors,
)
from .scenario import ALL, ObservabilityMask, Scenario, atom_objects, observed_objects
from .symbolic import (
    Atom,
    Const,
    Constraint,
    ConstraintError,
    Cube,
    EMPTY,
    EMPTY_SUB,
    Substitution,
    anti_unify,
    apply,
    apply_atom,
    eval_constraint,
    freeze,
    item_key,
    match_ground,
)


@dataclass(frozen=True)
class EstimatorConfig:
    stale_after: int = 5  # idle steps tolerated before an instance is dropped
    max_instances_per_object: Optional[int] = None
    verbosity: str = "decisions"  # "decisions" or "full" (adds branch records)
    fallback_plan: Optional[str] = "object-moving"

    def __post_init__(self):
        if self.stale_after < 0:
            raise ValueError("stale_after must be non-negative")
        if self.max_instances_per_object is not None and self.max_instances_per_object < 1:
            raise ValueError("max_instances_per_object must be at least 1")
        if self.verbosity not in ("decisions", "full"):
            raise ValueError(f"unknown verbosity {self.verbosity!r}")


DEFAULT_CONFIG = EstimatorConfig()


@dataclass(frozen=True)
class PlanInstance:
    id: str
    prototype: str
    marking: frozenset
    binding: Substitution = EMPTY_SUB
    held_tolerance: frozenset = frozenset()  # ground atoms and constraints
    created_at: int = 0
    last_matched_at: int = 0
    idle: int = 0  # consecutive steps without evidence
    active_tolerance: Optional[str] = None  # tolerance activity absorbing the last step


@dataclass(frozen=True)
class Situation:
    time: Optional[int] = None  # time of the last processed observation
    instances: tuple = ()
    known_objects: frozenset = frozenset()
    next_id: int = 1

    def instance(self, instance_id: str) -> PlanInstance:
        for inst in self.instances:
            if inst.id == instance_id:
                return inst
        raise KeyError(instance_id)

    def bound_objects(self, lib: PlanLibrary) -> frozenset:
        out: set = set()
        for inst in self.instances:
            out |= instance_objects(inst, lib)
        return frozenset(out)

    def unexplained(self, lib: PlanLibrary) -> frozenset:
        """Known objects that no live instance binds (should be empty)."""
        return self.known_objects - self.bound_objects(lib)


def instance_objects(inst: PlanInstance, lib: PlanLibrary) -> frozenset:
    ovars = lib.object_variables(lib.plan(inst.prototype))
    return frozenset(t.symbol for v, t in inst.binding.items() if v in ovars and isinstance(t, Const))


# ---------------------------------------------------------------------------
# Prediction and projection
# ---------------------------------------------------------------------------


def _union(cubes: Iterable[Cube]) -> Cube:
    atoms: set = set()
    constraints: set = set()
    for c in cubes:
        atoms |= c.atoms
        constraints |= c.constraints
    return Cube(frozenset(atoms), frozenset(constraints))


@dataclass(frozen=True)
class PredictedBranch:
    instance: str
    marking: frozenset
    transition: Optional[int] = None  # None is the stay branch
    expected_kernels: tuple = ()  # (place, Cube) sorted by place
    event: Cube = EMPTY
    tolerances: tuple = ()  # (place, Cube) activity tolerances
    tolerance_activities: tuple = ()  # (activity id, kernel Cube); stay branch only
    propagated_tolerance: frozenset = frozenset()
    objects: frozenset = frozenset()  # objects bound by the instance
    unobservable: bool = False

    @property
    def k(self) -> int:
        return 0 if self.transition is None else 1

    def pattern(self) -> Cube:
        return _union([c for _, c in self.expected_kernels] + [self.event])

    def tolerance(self, skip: Iterable[str] = ()) -> Cube:
        skip = set(skip)
        return _union(c for p, c in self.tolerances if p not in skip)


@dataclass(frozen=True)
class PredictedObservation:
    branches: tuple
    mask: ObservabilityMask = ALL


def predict(s: Situation, lib: PlanLibrary) -> list:
    """One branch per one-step-reachable marking of every live instance."""
    out = []
    for inst in s.instances:
        plan = lib.plan(inst.prototype)
        env = inst.binding.restrict(lib.object_variables(plan))
        objs = frozenset(t.symbol for t in env.values() if isinstance(t, Const))
        for t_idx, m in successors(plan, inst.marking):
            places = sorted(m)
            kernels = tuple((p, apply(env, lib.activity_of(plan, p).kernel)) for p in places)
            tols = tuple((p, apply(env, lib.activity_of(plan, p).tolerance)) for p in places)
            event = apply(env, plan.transitions[t_idx].event) if t_idx is not None else EMPTY
            tacts = ()
            if t_idx is None:
                tacts = tuple(
                    (aid, apply(env, lib.activities[aid].kernel)) for aid in sorted(plan.tolerance_activities)
                )
            kobjs = {
                x.symbol for _, c in kernels for a in c.atoms for x in a.args if isinstance(x, Const) and x.symbol in objs
            }
            propagated = frozenset(
                item
                for item in inst.held_tolerance
                if isinstance(item, Constraint) or atom_objects(item, kobjs)
            )
            out.append(
                PredictedBranch(inst.id, m, t_idx, kernels, event, tols, tacts, propagated, objs)
            )
    return out


def project(branches: Iterable[PredictedBranch], mask: ObservabilityMask = ALL) -> PredictedObservation:
    """Restrict branches to the predicates visible under ``mask``.

    A branch whose kernels disappear entirely is kept and flagged
    unobservable; it matches vacuously.
    """
    branches = tuple(branches)
    if mask.is_all:
        return PredictedObservation(branches, mask)
    out = []
    for b in branches:
        kernels = tuple((p, mask.project(c)) for p, c in b.expected_kernels)
        event = mask.project(b.event)
        tols = tuple(
            (p, Cube(frozenset(a for a in c.atoms if mask.shows(a.predicate)), c.constraints)) for p, c in b.tolerances
        )
        tacts = tuple((aid, mask.project(c)) for aid, c in b.tolerance_activities)
        held = frozenset(i for i in b.propagated_tolerance if isinstance(i, Constraint) or mask.shows(i.predicate))
        had = any(c.atoms for _, c in b.expected_kernels) or bool(b.event.atoms)
        empty = not any(c.atoms for _, c in kernels) and not event.atoms
        out.append(
            replace(
                b,
                expected_kernels=kernels,
                event=event,
                tolerances=tols,
                tolerance_activities=tacts,
                propagated_tolerance=held,
                unobservable=had and empty,
            )
        )
    return PredictedObservation(tuple(out), mask)


# ---------------------------------------------------------------------------
# Innovation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Innovation:
    instance: str
    kind: str  # "match", "absorbed", "miss" or "idle"
    matched_branch: Optional[PredictedBranch] = None
    substitution: Substitution = EMPTY_SUB
    image: Cube = EMPTY  # observed atoms explained by the branch kernels
    common: Cube = EMPTY  # generalization shared by observation and kernels
    supplementary: Cube = EMPTY  # relevant atoms outside image and tolerance
    extra: Cube = EMPTY  # relevant atoms outside image (tolerance ignored)
    missing: tuple = ()  # kernel parts not covered, one Cube per place
    tolerance_atoms: Cube = EMPTY  # extra atoms absorbed by activity tolerances
    satisfied: frozenset = frozenset()  # ground tolerance constraints that hold
    violations: frozenset = frozenset()  # ground tolerance constraints that fail
    absorbed: Optional[str] = None  # tolerance activity standing in for kernels
    suspended: frozenset = frozenset()  # places set aside during absorption
    unobservable: bool = False
    on_known: Cube = EMPTY  # part of ``supplementary`` about tracked objects only
    linking: Cube = EMPTY  # part of ``supplementary`` mentioning new objects

    @property
    def case(self) -> Optional[str]:
        if self.kind == "idle":
            return None
        if self.kind == "miss":
            return "e"
        if self.linking:
            return "d"
        if self.on_known or self.violations:
            return "b"
        return "a"

    @property
    def is_empty(self) -> bool:
        """The no-innovation form: a branch matched and nothing is left over."""
        return (
            self.matched_branch is not None
            and not self.supplementary
            and not self.missing
            and not self.violations
        )


def _matches(pattern: Cube, facts: Cube, base: Optional[Substitution] = None) -> list:
    try:
        return match_ground(pattern, facts, base)
    except ConstraintError:
        # Incomparable units never satisfy a constraint.
        return []


def _best_match(pattern: Cube, facts: Cube):
    best = None
    for sub in _matches(pattern, facts):
        image = frozenset(apply_atom(sub, a) for a in pattern.atoms)
        if best is None or len(image) > len(best[1]):
            best = (sub, image)
    return best


def _holds(c: Constraint) -> bool:
    try:
        return eval_constraint(c)
    except ConstraintError:
        return False


def _tolerance_check(tol: Cube, sub: Substitution, rest: frozenset):
    tol = apply(sub, tol)
    absorbed: set = set()
    for ta in tol.sorted_atoms():
        for s2 in _matches(Cube(frozenset([ta])), Cube(rest)):
            absorbed.add(apply_atom(s2, ta))
    satisfied = frozenset(c for c in tol.constraints if c.is_ground() and _holds(c))
    violated = frozenset(c for c in tol.constraints if c.is_ground() and not _holds(c))
    return frozenset(absorbed), satisfied, violated


def _classify(obs: Cube, objs: frozenset, known: frozenset, obs_objs: set):
    on_known, linking = set(), set()
    for a in obs.atoms:
        ao = atom_objects(a, obs_objs)
        if ao & objs:
            (on_known if ao <= known else linking).add(a)
    return on_known, linking


def _innovate_one(obs: Cube, obs_objs: set, known: frozenset, inst_id: str, branches: list) -> Innovation:
    stay = branches[0]
    objs = stay.objects
    on_known, linking = _classify(obs, objs, known, obs_objs)
    facts = Cube(frozenset(on_known | linking))
    if not facts:
        return Innovation(inst_id, "idle", unobservable=stay.unobservable)

    def finish(kind, b, sub, image, skip=frozenset(), absorbed=None):
        rest = facts.atoms - image
        tol_atoms, satisfied, violated = _tolerance_check(b.tolerance(skip), sub, rest)
        supp = rest - tol_atoms
        return Innovation(
            inst_id,
            kind,
            matched_branch=b,
            substitution=sub,
            image=Cube(image),
            common=Cube(image),
            supplementary=Cube(supp),
            extra=Cube(rest),
            tolerance_atoms=Cube(tol_atoms),
            satisfied=satisfied,
            violations=violated,
            absorbed=absorbed,
            suspended=frozenset(skip),
            unobservable=b.unobservable,
            on_known=Cube(supp & on_known),
            linking=Cube(supp & linking),
        )

    ranked = []
    for b in branches:
        pattern = b.pattern()
        found = _best_match(pattern, facts)
        if found is not None:
            sub, image = found
            key = (-len(image), -len(pattern.constraints), b.k, marking_key(b.marking))
            ranked.append((key, len(ranked), b, sub, image))
    if ranked:
        _, _, b, sub, image = min(ranked, key=lambda r: (r[0], r[1]))
        return finish("match", b, sub, image)

    # A tolerance activity may stand in for part of the stay marking.
    kernels = dict(stay.expected_kernels)
    for r in range(1, len(kernels) + 1):
        for suspended in combinations(sorted(kernels), r):
            rest = [c for p, c in stay.expected_kernels if p not in suspended]
            for aid, tk in stay.tolerance_activities:
                if not any(isinstance(x, Const) and x.symbol in objs for a in tk.atoms for x in a.args):
                    continue
                found = _best_match(_union(rest + [tk]), facts)
                if found is not None:
                    sub, image = found
                    return finish("absorbed", stay, sub, image, frozenset(suspended), aid)

    # Kernel miss: keep what observation and prediction have in common.
    best = None
    for n, b in enumerate(branches):
        kern = _union(c for _, c in b.expected_kernels)
        g = anti_unify(facts, kern)
        key = (-len(g.general.atoms), b.k, marking_key(b.marking), n)
        if best is None or key < best[0]:
            best = (key, b, g)
    _, b, g = best
    covered = {apply_atom(g.sub_b, a) for a in g.general.atoms}
    explained = frozenset(apply_atom(g.sub_a, a) for a in g.general.atoms)
    missing = tuple(Cube(c.atoms - covered) for _, c in b.expected_kernels if c.atoms - covered)
    supp = facts.atoms - explained
    return Innovation(
        inst_id,
        "miss",
        common=g.general,
        supplementary=Cube(supp),
        extra=Cube(supp),
        missing=missing,
        on_known=Cube(supp & on_known),
        linking=Cube(supp & linking),
    )


def innovate(obs: Cube, po: PredictedObservation, known_objects: Iterable[str] = ()) -> tuple:
    """Compare ``obs`` with the predicted observation, one Innovation per instance."""
    known = frozenset(known_objects)
    obs_objs = observed_objects(obs)
    groups: dict = {}
    for b in po.branches:
        groups.setdefault(b.instance, []).append(b)
    return tuple(_innovate_one(obs, obs_objs, known, iid, bs) for iid, bs in groups.items())


# ---------------------------------------------------------------------------
# Revision
# ---------------------------------------------------------------------------


def _jm(m) -> list:
    return sorted(m)


def _jb(b: Substitution) -> dict:
    return {str(v): str(t) for v, t in b.items_sorted()}


def _jc(c: Cube) -> list:
    return [str(a) for a in c.sorted_atoms()] + [str(k) for k in c.sorted_constraints()]


def _ji(items: Iterable) -> list:
    return [str(i) for i in sorted(items, key=item_key)]


@dataclass(frozen=True)
class _Candidate:
    plan: str
    marking: frozenset
    order: int  # breadth-first index of the marking
    sub: Substitution
    image: frozenset
    constraints: int


class _Step:
    """Per-step context shared by the revision helpers."""

    def __init__(self, s: Situation, obs: Cube, mask: ObservabilityMask, lib: PlanLibrary, cfg: EstimatorConfig, t: int):
        self.s = s
        self.obs = obs
        self.mask = mask
        self.lib = lib
        self.cfg = cfg
        self.t = t
        self.obs_objs = observed_objects(obs)
        self.known = s.known_objects
        self.next_id = s.next_id
        self.records: list = []
        self._ovars: dict = {}
        self._markings: dict = {}

    def ovars(self, plan_id: str) -> set:
        if plan_id not in self._ovars:
            self._ovars[plan_id] = self.lib.object_variables(self.lib.plan(plan_id))
        return self._ovars[plan_id]

    def objects(self, plan_id: str, binding: Substitution) -> frozenset:
        ov = self.ovars(plan_id)
        return frozenset(t.symbol for v, t in binding.items() if v in ov and isinstance(t, Const))

    def markings(self, plan_id: str) -> list:
        if plan_id not in self._markings:
            self._markings[plan_id] = reachable_markings(self.lib.plans[plan_id])
        return self._markings[plan_id]

    def new_id(self) -> str:
        iid = f"i{self.next_id}"
        self.next_id += 1
        return iid

    def record(self, **fields) -> None:
        fields["t"] = self.t
        self.records.append(fields)

    def kernel_pattern(self, plan_id: str, m: frozenset) -> Cube:
        plan = self.lib.plans[plan_id]
        return _union(self.mask.project(self.lib.activity_of(plan, p).kernel) for p in sorted(m))

    def tolerance_of(self, plan_id: str, m: frozenset) -> Cube:
        plan = self.lib.plans[plan_id]
        return _union(self.lib.activity_of(plan, p).tolerance for p in sorted(m))

    def candidates(self, plans: Iterable[str], facts: Cube, touch: frozenset) -> list:
        out = []
        for pid in plans:
            for order, m in enumerate(self.markings(pid)):
                pattern = self.kernel_pattern(pid, m)
                if not pattern.atoms:
                    continue
                for sub in _matches(pattern, facts):
                    # A hypothesis must identify every object role of its plan.
                    if not self.ovars(pid) <= set(sub):
                        continue
                    image = frozenset(apply_atom(sub, a) for a in pattern.atoms)
                    if image & touch:
                        out.append(_Candidate(pid, m, order, sub, image, len(pattern.constraints)))
        return out

    def select(self, cands: list) -> list:
        """Maximal covers first; among equal covers the least specific plan."""
        lib = self.lib
        keep = [c for c in cands if not any(c.image < d.image for d in cands)]
        keep = [
            c
            for c in keep
            if not any(d.image == c.image and d.plan != c.plan and more_specific(lib, c.plan, d.plan) for d in keep)
        ]
        best: dict = {}
        for c in keep:
            key = (c.plan, c.image)
            rank = (-c.constraints, c.order, c.sub.key())
            if key not in best or rank < best[key][0]:
                best[key] = (rank, c)
        return sorted((c for _, c in best.values()), key=lambda c: (-len(c.image), c.plan, c.order, c.sub.key()))

    def spawn(self, c: _Candidate, live: list, case: str, **extra) -> Optional[PlanInstance]:
        objs = self.objects(c.plan, c.sub)
        cap = self.cfg.max_instances_per_object
        if cap is not None:
            for o in objs:
                if sum(1 for i in live if o in self.objects(i.prototype, i.binding)) >= cap:
                    return None
        tol = apply(c.sub, self.tolerance_of(c.plan, c.marking))
        satisfied = frozenset(k for k in tol.constraints if k.is_ground() and _holds(k))
        violated = frozenset(k for k in tol.constraints if k.is_ground() and not _holds(k))
        leftover = frozenset(a for a in self.obs.atoms if atom_objects(a, objs) and a not in c.image)
        inst = PlanInstance(
            self.new_id(),
            c.plan,
            c.marking,
            c.sub,
            satisfied | leftover,
            created_at=self.t,
            last_matched_at=self.t,
        )
        live.append(inst)
        self.record(
            kind="spawn",
            case=case,
            instance=inst.id,
            plan=c.plan,
            after=_jm(c.marking),
            binding=_jb(c.sub),
            image=_jc(Cube(c.image)),
            held=_ji(inst.held_tolerance),
            violations=_ji(violated),
            **extra,
        )
        return inst


def _try_switch(ctx: _Step, inst: PlanInstance, inn: Innovation) -> Optional[PlanInstance]:
    lib = ctx.lib
    on_known, linking = _classify(inn.extra, ctx.objects(inst.prototype, inst.binding), ctx.known, ctx.obs_objs)
    required = frozenset(linking) if inn.case == "d" else frozenset(on_known | linking)
    if not required:
        return None
    specific = [q for q in sorted(lib.plans) if more_specific(lib, q, inst.prototype)]
    if not specific:
        return None
    objs = ctx.objects(inst.prototype, inst.binding)
    linked_new = set()
    for a in linking:
        linked_new |= atom_objects(a, ctx.obs_objs) - ctx.known
    scope = objs | linked_new
    facts = Cube(frozenset(a for a in ctx.obs.atoms if atom_objects(a, ctx.obs_objs) and atom_objects(a, ctx.obs_objs) <= scope))
    base = inn.image.atoms
    cands = [c for c in ctx.candidates(specific, facts, required) if c.image >= base]
    if not cands:
        return None
    plans = {c.plan for c in cands}
    minimal = set(minimal_plans(lib, plans))
    c = min(cands, key=lambda c: (-len(c.image), c.plan not in minimal, c.plan, c.order, c.sub.key()))
    held = (inst.held_tolerance | inn.extra.atoms) - c.image
    out = replace(
        inst,
        prototype=c.plan,
        marking=c.marking,
        binding=c.sub,
        held_tolerance=frozenset(held),
        last_matched_at=ctx.t,
        idle=0,
        active_tolerance=None,
    )
    return out


def revise(
    s: Situation,
    obs: Cube,
    innovations: Iterable[Innovation],
    lib: PlanLibrary,
    cfg: EstimatorConfig = DEFAULT_CONFIG,
    mask: ObservabilityMask = ALL,
    time: Optional[int] = None,
):
    """Apply the revision cases; returns ``(situation, records, violations)``."""
    t = time if time is not None else (0 if s.time is None else s.time + 1)
    ctx = _Step(s, obs, mask, lib, cfg, t)
    by_id = {i.id: i for i in s.instances}
    live: list = []
    misses: list = []

    for inn in innovations:
        inst = by_id[inn.instance]
        if inn.kind == "idle":
            idle = inst.idle if inn.unobservable else inst.idle + 1
            live.append(replace(inst, idle=idle))
            ctx.record(kind="idle", case=None, instance=inst.id, plan=inst.prototype, idle=idle,
                       unobservable=inn.unobservable, before=_jm(inst.marking), after=_jm(inst.marking))
            continue
        if inn.kind == "miss":
            misses.append((inst, inn))
            continue
        b = inn.matched_branch
        binding = inst.binding.restrict(ctx.ovars(inst.prototype)).merge(inn.substitution)
        held = frozenset(i for i in b.propagated_tolerance if isinstance(i, Atom)) | inn.tolerance_atoms.atoms
        # Freshly evaluated constraints replace the ones held from earlier steps.
        if inn.satisfied or inn.violations:
            held |= inn.satisfied
        else:
            held |= frozenset(i for i in b.propagated_tolerance if isinstance(i, Constraint))
        committed = replace(
            inst,
            marking=b.marking,
            binding=binding,
            held_tolerance=frozenset(held),
            last_matched_at=t,
            idle=0,
            active_tolerance=inn.absorbed,
        )
        detail = dict(
            supplementary=_jc(inn.supplementary),
            violations=_ji(inn.violations),
            absorbed=inn.absorbed,
            suspended=_jm(inn.suspended),
        )
        case = inn.case
        switched = _try_switch(ctx, committed, inn) if case in ("b", "d") else None
        if switched is not None:
            live.append(switched)
            ctx.record(kind="switch", case=case, instance=inst.id, plan=switched.prototype, from_plan=inst.prototype,
                       before=_jm(inst.marking), after=_jm(switched.marking), binding=_jb(switched.binding), **detail)
            continue
        if case in ("b", "d"):
            committed = replace(committed, held_tolerance=committed.held_tolerance | inn.supplementary.atoms)
        live.append(committed)
        ctx.record(kind="commit", case=case, instance=inst.id, plan=inst.prototype, before=_jm(inst.marking),
                   after=_jm(committed.marking), binding=_jb(committed.binding), **detail)

    for inst, inn in misses:
        _replace_missed(ctx, inst, inn, live)

    # Objects in this observation that no live instance binds.
    bound: set = set()
    for i in live:
        bound |= ctx.objects(i.prototype, i.binding)
    unbound = frozenset(ctx.obs_objs - bound)
    if unbound:
        touch = frozenset(a for a in obs.atoms if atom_objects(a, unbound))
        for c in ctx.select(ctx.candidates(sorted(lib.plans), obs, touch)):
            ctx.spawn(c, live, "c")
        for i in live:
            bound |= ctx.objects(i.prototype, i.binding)
        for o in sorted(ctx.obs_objs - bound):
            _fallback(ctx, o, live)

    # Staleness.
    kept = []
    for i in live:
        if i.idle > cfg.stale_after:
            ctx.record(kind="drop", case=None, instance=i.id, plan=i.prototype, idle=i.idle, before=_jm(i.marking))
        else:
            kept.append(i)

    bound = set()
    for i in kept:
        bound |= ctx.objects(i.prototype, i.binding)
    violations = tuple(sorted(ctx.obs_objs - bound))
    for o in violations:
        ctx.record(kind="violation", case=None, object=o)
    out = Situation(t, tuple(kept), frozenset(bound), ctx.next_id)
    return out, tuple(ctx.records), violations


def _replace_missed(ctx: _Step, inst: PlanInstance, inn: Innovation, live: list) -> None:
    lib = ctx.lib
    frozen = freeze(inn.common)
    scores = []
    if frozen.atoms:
        for pid in sorted(lib.plans):
            plan = lib.plans[pid]
            score = 0
            for aid in sorted(set(plan.places.values())):
                if aid in lib.activities:
                    score = max(score, len(anti_unify(frozen, lib.activities[aid].kernel).general.atoms))
            if score:
                scores.append((score, pid))
    scores.sort(key=lambda x: (-x[0], x[1]))
    replacements = []
    if scores:
        top = [pid for sc, pid in scores if sc == scores[0][0]]
        objs = ctx.objects(inst.prototype, inst.binding)
        touch = frozenset(a for a in ctx.obs.atoms if atom_objects(a, objs))
        for pid in minimal_plans(lib, top):
            cands = ctx.select(ctx.candidates([pid], ctx.obs, touch))
            if cands:
                new = ctx.spawn(cands[0], live, "e", replaces=inst.id)
                if new is not None:
                    replacements.append(new.id)
    ctx.record(
        kind="retire",
        case="e",
        instance=inst.id,
        plan=inst.prototype,
        before=_jm(inst.marking),
        common=_jc(inn.common),
        missing=[_jc(c) for c in inn.missing],
        supplementary=_jc(inn.supplementary),
        candidates=[[pid, sc] for sc, pid in scores],
        replacements=replacements,
    )


def _fallback(ctx: _Step, obj: str, live: list) -> None:
    lib = ctx.lib
    pid = ctx.cfg.fallback_plan
    if pid is None or pid not in lib.plans:
        return
    plan = lib.plans[pid]
    m = frozenset(plan.initial_marking)
    kernel = _union(lib.activity_of(plan, p).kernel for p in sorted(m))
    var = None
    for a in kernel.sorted_atoms():
        if a.args and not isinstance(a.args[0], Const) and a.args[0] in ctx.ovars(pid):
            var = a.args[0]
            break
    if var is None:
        return
    sub = Substitution({var: Const(obj)})
    ctx.spawn(_Candidate(pid, m, 0, sub, frozenset(), 0), live, "c", fallback=True)


# ---------------------------------------------------------------------------
# Driving the loop
# ---------------------------------------------------------------------------


def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


@dataclass(frozen=True)
class StepTrace:
    time: int
    branches: tuple = ()
    innovations: tuple = ()
    records: tuple = ()  # JSON-ready dicts, one per decision
    violations: tuple = ()  # observed objects left unexplained

    @property
    def cases(self) -> tuple:
        return tuple(r["case"] for r in self.records if r.get("case"))

    def lines(self) -> list:
        return [_dump(r) for r in self.records]

    def to_jsonl(self) -> str:
        return "".join(line + "\n" for line in self.lines())


def _branch_records(t: int, po: PredictedObservation) -> list:
    return [
        {
            "t": t,
            "kind": "branch",
            "case": None,
            "instance": b.instance,
            "after": _jm(b.marking),
            "transition": b.transition,
            "expected": [_jc(c) for _, c in b.expected_kernels],
            "unobservable": b.unobservable,
        }
        for b in po.branches
    ]


def step(
    s: Situation,
    obs: Cube,
    mask: ObservabilityMask,
    lib: PlanLibrary,
    cfg: EstimatorConfig = DEFAULT_CONFIG,
    time: Optional[int] = None,
):
    """predict, project, innovate, revise; returns ``(situation, trace)``."""
    if not obs.is_ground():
        raise ValueError("observations must be ground")
    if time is None:
        time = 0 if s.time is None else s.time + 1
    elif s.time is not None and time != s.time + 1:
        raise ValueError(f"expected observation for t={s.time + 1}, got t={time}")
    branches = predict(s, lib)
    po = project(branches, mask)
    inns = innovate(obs, po, s.known_objects)
    s2, records, violations = revise(s, obs, inns, lib, cfg, mask, time)
    if cfg.verbosity == "full":
        records = tuple(_branch_records(time, po)) + records
    return s2, StepTrace(time, po.branches, inns, records, violations)


@dataclass(frozen=True)
class StepResult:
    time: int
    situation: Situation
    trace: StepTrace


def run(scenario: Scenario, lib: PlanLibrary, cfg: EstimatorConfig = DEFAULT_CONFIG, start: Optional[Situation] = None) -> list:
    """Run the loop over a scenario (gaps filled with empty observations)."""
    s = start if start is not None else Situation()
    out = []
    for st in scenario.filled().steps:
        s, trace = step(s, st.obs, st.mask, lib, cfg, st.time)
        out.append(StepResult(st.time, s, trace))
    return out


def trace_text(results: Iterable[StepResult]) -> str:
    return "".join(r.trace.to_jsonl() for r in results)


def terminal(inst: PlanInstance, lib: PlanLibrary) -> bool:
    """True when no transition of the instance's plan is enabled."""
    return not enabled(lib.plan(inst.prototype), inst.marking)
