"""Ground-truth scenario generation with geometric predicates and noise.

Executions of plan prototypes produce the symbolic facts (types and other
non-geometric kernel atoms); object kinematics produce the geometric ones
(``speed``, ``getting-closer-to``, ``close-to``).  Noise is then applied in a
fixed order: state-noise interactions, occlusions and random drops, then
fictitious atoms.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .plan import PlanLibrary, fire, enabled, reachable_markings
from .scenario import ALL, ObservabilityMask, Scenario, ScenarioStep
from .symbolic import Atom, Const, Cube, Num, Substitution, apply_atom

Vec = tuple  # (Fraction, Fraction)


class ScriptError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    cone_half_angle: Fraction = Fraction(30)  # degrees
    close_radius: Fraction = Fraction(5)  # meters
    speed_scale: Fraction = Fraction(36, 10)  # m/step -> km/h with one-second steps
    speed_unit: Optional[str] = "km/h"
    speed_predicate: str = "speed"
    closer_predicate: str = "getting-closer-to"
    close_predicate: str = "close-to"

    @property
    def derived_predicates(self) -> frozenset:
        return frozenset({self.speed_predicate, self.closer_predicate, self.close_predicate})


DEFAULT_CONFIG = SimConfig()


@dataclass(frozen=True)
class ScheduleEntry:
    time: int
    marking: Optional[frozenset]  # None ends the execution
    tolerance: Optional[str] = None


@dataclass(frozen=True)
class Execution:
    plan: str
    bindings: Substitution
    schedule: tuple

    def state_at(self, t: int):
        """``(marking, tolerance activity)`` in force at ``t``, or None."""
        cur = None
        for e in self.schedule:
            if e.time > t:
                break
            cur = e
        if cur is None or cur.marking is None:
            return None
        return cur.marking, cur.tolerance


@dataclass(frozen=True)
class TrackEntry:
    time: int
    pos: Optional[Vec] = None
    vel: Optional[Vec] = None
    gone: bool = False


@dataclass(frozen=True)
class Track:
    obj: str
    entries: tuple

    def states(self, until: int) -> dict:
        """time -> (pos, vel) with per-step integration ``pos += vel``."""
        out: dict = {}
        entries = {e.time: e for e in self.entries}
        if not entries:
            return out
        t = min(entries)
        pos = vel = None
        while t <= until:
            e = entries.get(t)
            if e is not None:
                if e.gone:
                    pos = vel = None
                else:
                    if e.pos is not None:
                        pos = e.pos
                    if e.vel is not None:
                        vel = e.vel
                    if vel is None:
                        vel = (Fraction(0), Fraction(0))
            if pos is not None:
                out[t] = (pos, vel)
                pos = (pos[0] + vel[0], pos[1] + vel[1])
            t += 1
        return out


@dataclass(frozen=True)
class World:
    tracks: tuple = ()
    landmarks: tuple = ()  # (name, pos)

    def at(self, t: int) -> dict:
        return {tr.obj: st[t] for tr in self.tracks for st in [tr.states(t)] if t in st}


@dataclass(frozen=True)
class GroundTruthScript:
    executions: tuple = ()
    world: World = field(default_factory=World)
    horizon: Optional[tuple] = None  # (first, last)

    def time_range(self, noise: Optional["NoiseConfig"] = None) -> Optional[tuple]:
        if self.horizon is not None:
            return self.horizon
        # Closing entries ("end", "gone") are not observed instants themselves.
        times = [e.time for ex in self.executions for e in ex.schedule if e.marking is not None]
        times += [e.time for tr in self.world.tracks for e in tr.entries if not e.gone]
        if noise is not None:
            times += [t for t, _ in noise.fictitious] + [t for t, _ in noise.interactions]
        if not times:
            return None
        return min(times), max(times)


@dataclass(frozen=True)
class Occlusion:
    start: int
    end: int
    predicates: frozenset = frozenset()
    objects: frozenset = frozenset()

    def covers(self, t: int) -> bool:
        return self.start <= t <= self.end


@dataclass(frozen=True)
class NoiseConfig:
    occlusions: tuple = ()
    fictitious: tuple = ()  # (time, Cube)
    drop_rate: Fraction = Fraction(0)
    seed: Optional[int] = None
    interactions: tuple = ()  # (time, Cube)

    def __post_init__(self):
        rate = Fraction(self.drop_rate)
        object.__setattr__(self, "drop_rate", rate)
        if not 0 <= rate <= 1:
            raise ScriptError(f"drop rate {rate} outside [0, 1]")
        if rate > 0 and self.seed is None:
            raise ScriptError("a seed is mandatory when drop rate is positive")


NO_NOISE = NoiseConfig()


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def _cos2(degrees: Fraction) -> Fraction:
    c = math.cos(math.radians(float(degrees)))
    return Fraction(c * c).limit_denominator(10**6)


def quantize_speed(vel: Vec, cfg: SimConfig) -> Fraction:
    sq = vel[0] * vel[0] + vel[1] * vel[1]
    if sq == 0:
        return Fraction(0)
    return Fraction(round(math.sqrt(sq) * float(cfg.speed_scale) * 10), 10)


def in_cone(pos_a: Vec, vel_a: Vec, pos_b: Vec, half_angle: Fraction) -> bool:
    """Strictly inside the cone of half-angle ``half_angle`` around a->b."""
    dx, dy = pos_b[0] - pos_a[0], pos_b[1] - pos_a[1]
    v2 = vel_a[0] ** 2 + vel_a[1] ** 2
    d2 = dx * dx + dy * dy
    if v2 == 0 or d2 == 0:
        return False
    dot = vel_a[0] * dx + vel_a[1] * dy
    return dot > 0 and dot * dot > _cos2(half_angle) * v2 * d2


def derive_predicates(world: World, time: int, cfg: SimConfig = DEFAULT_CONFIG) -> Cube:
    """Geometric facts at ``time``: speeds, cone approach, proximity."""
    states = world.at(time)
    atoms = set()
    r2 = cfg.close_radius * cfg.close_radius
    targets = sorted(states.items()) + [(name, (pos, None)) for name, pos in world.landmarks]
    for obj, (pos, vel) in sorted(states.items()):
        atoms.add(Atom(cfg.speed_predicate, (Const(obj), Num(quantize_speed(vel, cfg), cfg.speed_unit))))
        for other, (opos, _) in targets:
            if other == obj:
                continue
            if in_cone(pos, vel, opos, cfg.cone_half_angle):
                atoms.add(Atom(cfg.closer_predicate, (Const(obj), Const(other))))
    # close-to is symmetric: objects in name order, landmarks always second.
    objs = sorted(states)
    for i, a in enumerate(objs):
        pa = states[a][0]
        for b in objs[i + 1:]:
            pb = states[b][0]
            if (pa[0] - pb[0]) ** 2 + (pa[1] - pb[1]) ** 2 < r2:
                atoms.add(Atom(cfg.close_predicate, (Const(a), Const(b))))
        for name, pos in world.landmarks:
            if (pa[0] - pos[0]) ** 2 + (pa[1] - pos[1]) ** 2 < r2:
                atoms.add(Atom(cfg.close_predicate, (Const(a), Const(name))))
    return Cube(frozenset(atoms))


# ---------------------------------------------------------------------------
# Script checking and simulation
# ---------------------------------------------------------------------------


def check_script(script: GroundTruthScript, lib: PlanLibrary) -> None:
    """Raise ScriptError unless every schedule follows its plan's net."""
    for n, ex in enumerate(script.executions):
        if ex.plan not in lib.plans:
            raise ScriptError(f"execution {n}: unknown plan {ex.plan!r}")
        plan = lib.plans[ex.plan]
        known = lib.plan_variables(plan)
        for v in ex.bindings:
            if v not in known:
                raise ScriptError(f"execution {n}: {v} is not a variable of {ex.plan}")
        prev = None
        last_time = None
        for e in ex.schedule:
            if last_time is not None and e.time <= last_time:
                raise ScriptError(f"execution {n}: schedule times must increase (t={e.time})")
            last_time = e.time
            if e.marking is None:
                prev = None
                continue
            unknown = e.marking - set(plan.places)
            if unknown:
                raise ScriptError(f"execution {n}: unknown place(s) {', '.join(sorted(unknown))}")
            if e.tolerance is not None and e.tolerance not in plan.tolerance_activities:
                raise ScriptError(f"execution {n}: {e.tolerance} is not a tolerance activity of {ex.plan}")
            if prev is None:
                if e.marking not in reachable_markings(plan):
                    raise ScriptError(f"execution {n}: marking {sorted(e.marking)} is not reachable")
            elif e.marking != prev:
                nexts = {fire(plan, prev, i) for i in enabled(plan, prev)}
                if e.marking not in nexts:
                    raise ScriptError(
                        f"execution {n}: t={e.time} marking {sorted(e.marking)} "
                        f"is not one firing away from {sorted(prev)}"
                    )
            prev = e.marking


def _script_atoms(script: GroundTruthScript, lib: PlanLibrary, t: int, cfg: SimConfig) -> set:
    out = set()
    derived = cfg.derived_predicates
    for ex in script.executions:
        st = ex.state_at(t)
        if st is None:
            continue
        marking, tol = st
        plan = lib.plans[ex.plan]
        acts = [lib.activities[plan.places[p]] for p in sorted(marking)]
        if tol is not None:
            acts.append(lib.activities[tol])
        for act in acts:
            for a in act.kernel.atoms:
                if a.predicate in derived:
                    continue
                g = apply_atom(ex.bindings, a)
                if g.is_ground():
                    out.add(g)
    return out


def simulate(
    script: GroundTruthScript,
    noise: NoiseConfig = NO_NOISE,
    lib: Optional[PlanLibrary] = None,
    cfg: SimConfig = DEFAULT_CONFIG,
) -> Scenario:
    """Observation stream for ``script`` with ``noise`` applied."""
    lib = lib if lib is not None else PlanLibrary()
    check_script(script, lib)
    span = script.time_range(noise)
    if span is None:
        return Scenario()
    rng = random.Random(noise.seed) if noise.drop_rate > 0 else None
    steps = []
    for t in range(span[0], span[1] + 1):
        atoms = _script_atoms(script, lib, t, cfg)
        atoms |= derive_predicates(script.world, t, cfg).atoms
        for when, cube in noise.interactions:
            if when == t:
                atoms |= cube.atoms
        hidden_preds: set = set()
        hidden_objs: set = set()
        for occ in noise.occlusions:
            if occ.covers(t):
                hidden_preds |= occ.predicates
                hidden_objs |= occ.objects
        atoms = {
            a
            for a in atoms
            if a.predicate not in hidden_preds
            and not any(isinstance(x, Const) and x.symbol in hidden_objs for x in a.args)
        }
        if rng is not None:
            kept = set()
            for a in sorted(atoms, key=Atom.key):
                if rng.random() >= noise.drop_rate:
                    kept.add(a)
            atoms = kept
        for when, cube in noise.fictitious:
            if when == t:
                atoms |= cube.atoms
        mask = ALL
        if hidden_preds and lib.predicates:
            mask = ObservabilityMask.only(set(lib.predicates) - hidden_preds)
        steps.append(ScenarioStep(t, Cube(frozenset(atoms)), mask))
    return Scenario(tuple(steps))
