"""Observation streams and observability masks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .symbolic import Atom, Const, Cube


@dataclass(frozen=True)
class ObservabilityMask:
    """Predicates currently observable; ``visible=None`` means all of them."""

    visible: Optional[frozenset] = None

    def __post_init__(self):
        if self.visible is not None and not isinstance(self.visible, frozenset):
            object.__setattr__(self, "visible", frozenset(self.visible))

    @classmethod
    def all(cls) -> "ObservabilityMask":
        return cls(None)

    @classmethod
    def only(cls, predicates: Iterable[str]) -> "ObservabilityMask":
        return cls(frozenset(predicates))

    @property
    def is_all(self) -> bool:
        return self.visible is None

    def shows(self, predicate: str) -> bool:
        return self.visible is None or predicate in self.visible

    def project(self, cube: Cube) -> Cube:
        """Drop invisible atoms, and constraints left without a binding atom."""
        if self.visible is None:
            return cube
        atoms = frozenset(a for a in cube.atoms if a.predicate in self.visible)
        bound: set = set()
        for a in atoms:
            bound |= a.variables()
        constraints = frozenset(c for c in cube.constraints if c.variables() <= bound)
        return Cube(atoms, constraints)

    def __str__(self) -> str:
        return "all" if self.visible is None else " ".join(sorted(self.visible))


ALL = ObservabilityMask()


@dataclass(frozen=True)
class ScenarioStep:
    time: int
    obs: Cube
    mask: ObservabilityMask = ALL


@dataclass(frozen=True)
class Scenario:
    steps: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    def filled(self) -> "Scenario":
        """Insert empty observations so that times are contiguous."""
        if not self.steps:
            return self
        out = []
        prev = None
        for st in self.steps:
            if prev is not None:
                for t in range(prev.time + 1, st.time):
                    out.append(ScenarioStep(t, Cube(), prev.mask))
            out.append(st)
            prev = st
        return Scenario(tuple(out))


def observed_objects(obs: Cube) -> set:
    """Objects of an observation: constants in first-argument position."""
    return {a.args[0].symbol for a in obs.atoms if a.args and isinstance(a.args[0], Const)}


def atom_objects(atom: Atom, objects: Iterable[str]) -> set:
    objs = objects if isinstance(objects, (set, frozenset)) else set(objects)
    return {t.symbol for t in atom.args if isinstance(t, Const) and t.symbol in objs}
