"""Terms, atoms, constrained cubes and the matching engine.

Terms are flat: variables, constants and exact rational numbers with an
optional opaque unit tag.  A cube is a conjunction of atoms plus numeric
constraints, every variable being existentially quantified.

Matching is done in two flavours:

* ``match_ground`` -- every substitution mapping a pattern cube into a set of
  ground facts (with all constraints satisfied);
* ``anti_unify`` -- least general generalization of a ground cube and a
  pattern cube, used for imperfect matching.

``reduce`` computes the core of a cube (removal of atoms made redundant by a
retraction of the cube onto itself).
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Iterable, Iterator, Mapping, Optional, Union


class ConstraintError(ValueError):
    """A constraint could not be evaluated (non-ground, ill-typed)."""


class UnitMismatch(ConstraintError):
    pass


# ---------------------------------------------------------------------------
# Terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Var:
    name: str

    def __post_init__(self):
        if not self.name:
            raise ValueError("variable name must be nonempty")

    def __str__(self) -> str:
        return f"?{self.name}"


@dataclass(frozen=True)
class Const:
    symbol: str

    def __post_init__(self):
        if not self.symbol:
            raise ValueError("constant symbol must be nonempty")

    def __str__(self) -> str:
        return self.symbol


@dataclass(frozen=True)
class Num:
    value: Fraction
    unit: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.value, Fraction):
            object.__setattr__(self, "value", Fraction(self.value))

    def __str__(self) -> str:
        return format_number(self.value) + (self.unit or "")


Term = Union[Var, Const, Num]


def format_number(value: Fraction) -> str:
    """Render an exact rational as a finite decimal literal."""
    value = Fraction(value)
    sign = "-" if value < 0 else ""
    value = abs(value)
    digits = 0
    while (value * 10**digits).denominator != 1:
        digits += 1
        if digits > 40:
            raise ValueError(f"{value} has no finite decimal form")
    scaled = value * 10**digits
    text = str(scaled.numerator)
    if digits:
        text = text.rjust(digits + 1, "0")
        text = text[:-digits] + "." + text[-digits:]
    return sign + text


def term_key(t: Term) -> tuple:
    """Total order over terms: variables, then constants, then numbers."""
    if isinstance(t, Var):
        return (0, t.name, 0, "")
    if isinstance(t, Const):
        return (1, t.symbol, 0, "")
    return (2, "", t.value, t.unit or "")


def is_ground_term(t: Term) -> bool:
    return not isinstance(t, Var)


# ---------------------------------------------------------------------------
# Atoms, constraints, cubes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Atom:
    predicate: str
    args: tuple = ()

    def __post_init__(self):
        if not isinstance(self.args, tuple):
            object.__setattr__(self, "args", tuple(self.args))

    @property
    def arity(self) -> int:
        return len(self.args)

    def variables(self) -> set:
        return {a for a in self.args if isinstance(a, Var)}

    def is_ground(self) -> bool:
        return all(is_ground_term(a) for a in self.args)

    def key(self) -> tuple:
        return (self.predicate, len(self.args), tuple(term_key(a) for a in self.args))

    def __str__(self) -> str:
        return "(" + " ".join([self.predicate, *map(str, self.args)]) + ")"


@dataclass(frozen=True)
class Interval:
    lo: Num
    hi: Num

    def __str__(self) -> str:
        return f"[{self.lo}, {self.hi}]"


RELATIONS = ("=", "!=", "<", "<=", ">", ">=", "in")


@dataclass(frozen=True)
class Constraint:
    left: Term
    relation: str
    right: Union[Term, Interval]

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")
        if (self.relation == "in") != isinstance(self.right, Interval):
            raise ValueError("'in' takes an interval and only 'in' does")

    def variables(self) -> set:
        out = {t for t in (self.left, self.right) if isinstance(t, Var)}
        return out

    def is_ground(self) -> bool:
        return not self.variables()

    def key(self) -> tuple:
        right = self.right
        if isinstance(right, Interval):
            rkey = (3, "", right.lo.value, right.hi.value, right.lo.unit or "", right.hi.unit or "")
        else:
            rkey = term_key(right) + (0, "")
        return (term_key(self.left), self.relation, rkey)

    def __str__(self) -> str:
        return f"{self.left} {self.relation} {self.right}"


Item = Union[Atom, Constraint]


def item_key(item: Item) -> tuple:
    if isinstance(item, Atom):
        return (0, item.key(), ())
    return (1, (), item.key())


@dataclass(frozen=True)
class Cube:
    atoms: frozenset = field(default_factory=frozenset)
    constraints: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not isinstance(self.atoms, frozenset):
            object.__setattr__(self, "atoms", frozenset(self.atoms))
        if not isinstance(self.constraints, frozenset):
            object.__setattr__(self, "constraints", frozenset(self.constraints))

    @classmethod
    def of(cls, *atoms: Atom, constraints: Iterable[Constraint] = ()) -> "Cube":
        return cls(frozenset(atoms), frozenset(constraints))

    def variables(self) -> set:
        out: set = set()
        for a in self.atoms:
            out |= a.variables()
        for c in self.constraints:
            out |= c.variables()
        return out

    def atom_variables(self) -> set:
        out: set = set()
        for a in self.atoms:
            out |= a.variables()
        return out

    def is_ground(self) -> bool:
        return not self.constraints and all(a.is_ground() for a in self.atoms)

    def sorted_atoms(self) -> list:
        return sorted(self.atoms, key=Atom.key)

    def sorted_constraints(self) -> list:
        return sorted(self.constraints, key=Constraint.key)

    def union(self, other: "Cube") -> "Cube":
        return Cube(self.atoms | other.atoms, self.constraints | other.constraints)

    def __bool__(self) -> bool:
        return bool(self.atoms or self.constraints)

    def __len__(self) -> int:
        return len(self.atoms) + len(self.constraints)

    def __str__(self) -> str:
        parts = [str(a) for a in self.sorted_atoms()]
        if self.constraints:
            parts.append("{" + ", ".join(str(c) for c in self.sorted_constraints()) + "}")
        return " ".join(parts) if parts else "{}"


EMPTY = Cube()


# ---------------------------------------------------------------------------
# Substitutions
# ---------------------------------------------------------------------------


class Substitution(Mapping):
    """Immutable mapping from variables to terms."""

    __slots__ = ("_map", "_hash")

    def __init__(self, bindings: Union[Mapping, Iterable, None] = None):
        m = dict(bindings or {})
        for k in m:
            if not isinstance(k, Var):
                raise TypeError(f"substitution domain must be variables, got {k!r}")
        self._map = m
        self._hash = None

    def __getitem__(self, var: Var) -> Term:
        return self._map[var]

    def __iter__(self) -> Iterator[Var]:
        return iter(self._map)

    def __len__(self) -> int:
        return len(self._map)

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._map.items()))
        return self._hash

    def __eq__(self, other) -> bool:
        if isinstance(other, Substitution):
            return self._map == other._map
        if isinstance(other, Mapping):
            return self._map == dict(other)
        return NotImplemented

    def __repr__(self) -> str:
        return "Substitution({" + ", ".join(f"{k}: {v}" for k, v in self.items_sorted()) + "})"

    def __str__(self) -> str:
        return "{" + ", ".join(f"{k}->{v}" for k, v in self.items_sorted()) + "}"

    def items_sorted(self) -> list:
        return sorted(self._map.items(), key=lambda kv: kv[0].name)

    def key(self) -> tuple:
        return tuple((k.name, term_key(v)) for k, v in self.items_sorted())

    def bind(self, var: Var, term: Term) -> Optional["Substitution"]:
        """Extend with ``var -> term``; None on conflict."""
        cur = self._map.get(var)
        if cur is not None:
            return self if cur == term else None
        m = dict(self._map)
        m[var] = term
        return Substitution(m)

    def merge(self, other: Mapping) -> Optional["Substitution"]:
        m = dict(self._map)
        for k, v in other.items():
            cur = m.get(k)
            if cur is not None and cur != v:
                return None
            m[k] = v
        return Substitution(m)

    def restrict(self, variables: Iterable[Var]) -> "Substitution":
        keep = set(variables)
        return Substitution({k: v for k, v in self._map.items() if k in keep})

    def without(self, variables: Iterable[Var]) -> "Substitution":
        drop = set(variables)
        return Substitution({k: v for k, v in self._map.items() if k not in drop})


EMPTY_SUB = Substitution()


def apply_term(sub: Mapping, t):
    if isinstance(t, Var):
        return sub.get(t, t)
    return t


def apply_atom(sub: Mapping, a: Atom) -> Atom:
    return Atom(a.predicate, tuple(apply_term(sub, t) for t in a.args))


def apply_constraint(sub: Mapping, c: Constraint) -> Constraint:
    right = c.right if isinstance(c.right, Interval) else apply_term(sub, c.right)
    return Constraint(apply_term(sub, c.left), c.relation, right)


def apply_item(sub: Mapping, item: Item) -> Item:
    if isinstance(item, Atom):
        return apply_atom(sub, item)
    return apply_constraint(sub, item)


def apply(sub: Mapping, c: Cube) -> Cube:
    """Replace every occurrence of a domain variable of ``sub`` in ``c``."""
    if not sub:
        return c
    return Cube(
        frozenset(apply_atom(sub, a) for a in c.atoms),
        frozenset(apply_constraint(sub, k) for k in c.constraints),
    )


# ---------------------------------------------------------------------------
# Constraint evaluation
# ---------------------------------------------------------------------------


def _check_units(a: Num, b: Num) -> None:
    # Unitless numbers are compatible with any unit.
    if a.unit and b.unit and a.unit != b.unit:
        raise UnitMismatch(f"cannot compare {a} with {b}")


_ORDER = {
    "=": lambda x, y: x == y,
    "!=": lambda x, y: x != y,
    "<": lambda x, y: x < y,
    "<=": lambda x, y: x <= y,
    ">": lambda x, y: x > y,
    ">=": lambda x, y: x >= y,
}


def eval_constraint(c: Constraint) -> bool:
    """Evaluate a ground constraint with exact rational semantics."""
    if not c.is_ground():
        raise ConstraintError(f"constraint {c} is not ground")
    left, rel, right = c.left, c.relation, c.right
    if rel == "in":
        if not isinstance(left, Num):
            raise ConstraintError(f"interval membership needs a number: {c}")
        _check_units(left, right.lo)
        _check_units(left, right.hi)
        return right.lo.value <= left.value <= right.hi.value
    if isinstance(left, Num) and isinstance(right, Num):
        _check_units(left, right)
        return _ORDER[rel](left.value, right.value)
    if rel in ("=", "!="):
        same = left == right
        return same if rel == "=" else not same
    raise ConstraintError(f"ordering relation on symbols: {c}")


# ---------------------------------------------------------------------------
# Ground matching
# ---------------------------------------------------------------------------


def _unify_atom(pattern: Atom, fact: Atom, sub: Substitution) -> Optional[Substitution]:
    m = None
    for p, f in zip(pattern.args, fact.args):
        if isinstance(p, Var):
            cur = (m or sub._map).get(p)
            if cur is None:
                if m is None:
                    m = dict(sub._map)
                m[p] = f
            elif cur != f:
                return None
        elif p != f:
            return None
    return sub if m is None else Substitution(m)


def _constraints_ok(constraints, sub: Substitution) -> bool:
    for c in constraints:
        try:
            if not eval_constraint(apply_constraint(sub, c)):
                return False
        except ConstraintError:
            # Ill-typed comparisons (unit clash, ordering symbols) never match.
            return False
    return True


def iter_matches(
    pattern: Cube, facts: Cube, base: Optional[Substitution] = None
) -> Iterator[Substitution]:
    """Lazily enumerate matches of ``pattern`` into ``facts`` (may repeat)."""
    sub0 = base if base is not None else EMPTY_SUB
    index: dict = defaultdict(list)
    for f in facts.sorted_atoms():
        index[(f.predicate, f.arity)].append(f)

    bound = set(sub0)
    for a in pattern.atoms:
        bound |= a.variables()
    if any(not (c.variables() <= bound) for c in pattern.constraints):
        raise ConstraintError(
            "constraint variables must occur in some atom: "
            + ", ".join(str(c) for c in pattern.constraints if not c.variables() <= bound)
        )
    ready = [c for c in pattern.constraints if c.variables() <= set(sub0)]
    if not _constraints_ok(ready, sub0):
        return
    waiting = frozenset(c for c in pattern.constraints if not c.variables() <= set(sub0))

    def rec(todo: list, sub: Substitution, waiting: frozenset):
        if not todo:
            yield sub
            return
        # Fail first: expand the atom with the fewest compatible facts.
        best = None
        for i, a in enumerate(todo):
            options = [s2 for f in index.get((a.predicate, a.arity), ()) if (s2 := _unify_atom(a, f, sub)) is not None]
            if best is None or len(options) < len(best[1]):
                best = (i, options)
                if not options:
                    return
        i, options = best
        rest = todo[:i] + todo[i + 1 :]
        for s2 in options:
            now = [c for c in waiting if c.variables() <= s2.keys()]
            if _constraints_ok(now, s2):
                yield from rec(rest, s2, waiting.difference(now))

    yield from rec(sorted(pattern.atoms, key=Atom.key), sub0, waiting)


def match_ground(
    pattern: Cube, facts: Cube, base: Optional[Substitution] = None
) -> list:
    """Every substitution mapping ``pattern`` into the ground ``facts``.

    The result is deduplicated and sorted by the bound terms.  With ``base``
    the search only extends that substitution.
    """
    return sorted(set(iter_matches(pattern, facts, base)), key=Substitution.key)


# ---------------------------------------------------------------------------
# Anti-unification and reduction
# ---------------------------------------------------------------------------

_FROZEN = "?"


def freeze(c: Cube) -> Cube:
    """Turn variables into reserved constants so a cube can serve as facts."""
    sub = {v: Const(_FROZEN + v.name) for v in c.variables()}
    return apply(sub, c)


def _thaw_term(t):
    if isinstance(t, Const) and t.symbol.startswith(_FROZEN):
        return Var(t.symbol[len(_FROZEN):])
    return t


def thaw_substitution(sub: Substitution) -> Substitution:
    return Substitution({k: _thaw_term(v) for k, v in sub.items()})


def _is_idempotent(sub: Mapping) -> bool:
    return all(apply_term(sub, v) == v for v in sub.values())


def _idempotent_power(h: Substitution) -> Substitution:
    # Some power of an endomorphism of a finite cube is idempotent.
    g = h
    while not _is_idempotent(g):
        g = Substitution({v: apply_term(h, t) for v, t in g.items()})
    return g


def _find_retraction(c: Cube) -> Optional[Substitution]:
    atoms = sorted(c.atoms, key=Atom.key, reverse=True)
    frozen_constraints = freeze(Cube(frozenset(), c.constraints)).constraints
    pattern = Cube(c.atoms)
    for drop in atoms:
        if drop.is_ground():
            # Ground atoms map to themselves, so they can never be dropped.
            continue
        target = freeze(Cube(c.atoms - {drop}))
        for h in iter_matches(pattern, target):
            h = thaw_substitution(h)
            mapped = freeze(Cube(frozenset(), frozenset(apply_constraint(h, k) for k in c.constraints)))
            if mapped.constraints <= frozen_constraints:
                return _idempotent_power(h)
    return None


def reduce(c: Cube) -> Cube:
    """Core of ``c``: drop atoms made redundant by a retraction of the cube.

    A retraction is an idempotent substitution ``h`` with ``h(c) < c``; it
    fixes every variable that survives, so matches of the reduced cube are
    exactly the matches of ``c`` restricted to the surviving variables.
    """
    cur = c
    while True:
        h = _find_retraction(cur)
        if h is None:
            return cur
        cur = apply(h, cur)


@dataclass(frozen=True)
class Generalization:
    general: Cube
    sub_a: Substitution
    sub_b: Substitution

    def __iter__(self):
        return iter((self.general, self.sub_a, self.sub_b))


def anti_unify(a: Cube, b: Cube) -> Generalization:
    """Least general generalization of cube ``a`` (ground) and cube ``b``.

    Same-predicate atom pairs are generalized position-wise; each distinct
    pair of differing terms gets one fresh variable everywhere it occurs.
    A constraint of ``b`` carries over only when ``a``'s values satisfy it.
    """
    used = {v.name for v in a.variables() | b.variables()}
    counter = 0

    def fresh() -> Var:
        nonlocal counter
        while True:
            counter += 1
            name = f"_g{counter}"
            if name not in used:
                return Var(name)

    table: dict = {}
    order: list = []
    general_atoms: list = []
    for x in a.sorted_atoms():
        for y in b.sorted_atoms():
            if x.predicate != y.predicate or x.arity != y.arity:
                continue
            args = []
            for s, t in zip(x.args, y.args):
                if s == t:
                    args.append(s)
                    continue
                v = table.get((s, t))
                if v is None:
                    v = table[(s, t)] = fresh()
                    order.append(v)
                args.append(v)
            general_atoms.append(Atom(x.predicate, tuple(args)))

    sub_a = Substitution({v: s for (s, t), v in table.items()})
    sub_b = Substitution({v: t for (s, t), v in table.items()})

    # Constraints of b, rewritten on the generalizing variables.
    back: dict = defaultdict(list)
    for (s, t), v in table.items():
        if isinstance(t, Var):
            back[t].append(v)
    kept = set()
    for k in b.sorted_constraints():
        kvars = sorted(k.variables(), key=lambda v: v.name)
        choices = [back.get(v, []) for v in kvars]
        if any(not ch for ch in choices):
            continue
        for combo in product(*choices):
            renamed = apply_constraint(dict(zip(kvars, combo)), k)
            grounded = apply_constraint(sub_a, renamed)
            if not grounded.is_ground():
                continue
            try:
                ok = eval_constraint(grounded)
            except ConstraintError:
                ok = False
            if ok:
                kept.add(renamed)

    general = reduce(Cube(frozenset(general_atoms), frozenset(kept)))

    # Rename survivors in first-occurrence order so the result is canonical.
    survivors = general.variables()
    rename: dict = {}
    n = 0
    for v in order:
        if v in survivors and v not in rename:
            n += 1
            name = f"G{n}"
            while name in used:
                n += 1
                name = f"G{n}"
            rename[v] = Var(name)
    general = apply(rename, general)
    sub_a = Substitution({rename[v]: sub_a[v] for v in rename})
    sub_b = Substitution({rename[v]: sub_b[v] for v in rename})
    return Generalization(general, sub_a, sub_b)


__all__ = [
    "Atom",
    "Const",
    "Constraint",
    "ConstraintError",
    "Cube",
    "EMPTY",
    "EMPTY_SUB",
    "Generalization",
    "Interval",
    "Num",
    "RELATIONS",
    "Substitution",
    "Term",
    "UnitMismatch",
    "Var",
    "anti_unify",
    "apply",
    "apply_atom",
    "apply_constraint",
    "eval_constraint",
    "format_number",
    "freeze",
    "iter_matches",
    "match_ground",
    "reduce",
    "term_key",
]
