"""Brute-force reference implementations for small cubes."""

from itertools import combinations, product

from sitest.symbolic import (
    Atom,
    ConstraintError,
    Cube,
    Substitution,
    Var,
    apply,
    eval_constraint,
    freeze,
    match_ground,
)


def brute_matches(pattern: Cube, facts: Cube) -> set:
    """Every assignment of pattern variables to fact terms that works."""
    variables = sorted(pattern.variables(), key=lambda v: v.name)
    terms = sorted({t for a in facts.atoms for t in a.args}, key=str)
    out = set()
    for values in product(terms, repeat=len(variables)):
        sub = Substitution(dict(zip(variables, values)))
        g = apply(sub, pattern)
        if not g.atoms <= facts.atoms:
            continue
        try:
            ok = all(eval_constraint(c) for c in g.constraints)
        except ConstraintError:
            ok = False
        if ok:
            out.add(sub)
    return out


def instance_of(general: Cube, target: Cube) -> bool:
    """Some substitution maps the atoms of ``general`` into ``target``."""
    return bool(match_ground(Cube(general.atoms), freeze(Cube(target.atoms))))


def _pair_generalizations(x: Atom, y: Atom, pool: tuple) -> list:
    """Every way of generalizing the pair (x, y) with variables from ``pool``."""
    options = []
    for s, t in zip(x.args, y.args):
        opts = list(pool)
        if s == t:
            opts.append(s)
        options.append(opts)
    return [Atom(x.predicate, tuple(args)) for args in product(*options)]


def common_generalizations(a: Cube, b: Cube, max_atoms: int = 2, pool_size: int = 2):
    """Cubes of at most ``max_atoms`` atoms having both ``a`` and ``b`` as instances.

    Every atom of such a cube maps onto some pair of same-predicate atoms of
    ``a`` and ``b``, so enumerating generalizations of those pairs (with
    variables drawn from a small pool) covers the small part of the lattice.
    """
    pool = tuple(Var(f"W{i}") for i in range(pool_size))
    pairs = [
        (x, y)
        for x in a.sorted_atoms()
        for y in b.sorted_atoms()
        if x.predicate == y.predicate and x.arity == y.arity
    ]
    atom_options = sorted({g for x, y in pairs for g in _pair_generalizations(x, y, pool)}, key=Atom.key)
    for n in range(1, max_atoms + 1):
        for chosen in combinations(atom_options, n):
            cube = Cube(frozenset(chosen))
            if instance_of(cube, a) and instance_of(cube, b):
                yield cube
