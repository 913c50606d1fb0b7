"""Textual forms: plan libraries (``.plan``), scenarios (``.obs``), scripts.

Atoms are s-expressions ``(pred ?var Const 5km/h)``.  A library is a
sequence of ``predicate``, ``activity`` and ``plan`` statements::

    predicate type/2, speed/2;

    activity parked-vehicle {
      kernel: (type ?y vehicle) (speed ?y ?v) { ?v = 0 };
      tolerance: atoms [(make ?y ?m)] constraints { ?v <= 8km/h };
    }

    plan vehicle-arrival {
      places: vehicle-moving, parked = parked-vehicle;
      transitions {
        [vehicle-moving] -> [parked];
      }
      initial: [vehicle-moving];
      refines: [object-moving];
    }

Scenarios are line based: ``t=<n> obs <atoms...>`` and
``t=<n> visible <predicates...|all>``.  Comments run from ``#`` to end of
line.  The parser recovers at statement boundaries and reports every error
it finds as a :class:`Diagnostic`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Union

from .plan import (
    ActivityPrototype,
    Diagnostic,
    PlanLibrary,
    PlanPrototype,
    SourceSpan,
    Transition,
    validate,
)
from .scenario import ALL, ObservabilityMask, Scenario, ScenarioStep
from .symbolic import Atom, Const, Constraint, Cube, Interval, Num, Substitution, Var


class ParseFailed(ValueError):
    """Raised with every diagnostic collected while reading a source."""

    def __init__(self, diagnostics: list):
        self.diagnostics = list(diagnostics)
        first = self.diagnostics[0] if self.diagnostics else "parse failed"
        more = len(self.diagnostics) - 1
        super().__init__(f"{first}" + (f" (+{more} more)" if more > 0 else ""))


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

_IDENT = r"[A-Za-z_][A-Za-z0-9_]*(?:-[A-Za-z0-9_]+)*"
_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<string>"[^"\n]*")
  | (?P<num>-?[0-9]+(?:\.[0-9]+)?(?:[A-Za-z%][A-Za-z0-9%/]*)?)
  | (?P<var>\?"""
    + _IDENT
    + r""")
  | (?P<ident>"""
    + _IDENT
    + r""")
  | (?P<arrow>->)
  | (?P<rel><=|>=|!=|=|<|>)
  | (?P<punct>[()\[\]{}:;,/])
    """,
    re.VERBOSE,
)

_NUM_RE = re.compile(r"(-?[0-9]+(?:\.[0-9]+)?)(.*)")


@dataclass(frozen=True)
class Token:
    kind: str  # ident var num string arrow rel punct nl eof
    text: str
    line: int
    column: int
    offset: int

    @property
    def length(self) -> int:
        return max(len(self.text), 1)


def parse_number(text: str) -> Num:
    m = _NUM_RE.fullmatch(text)
    if m is None:
        raise ValueError(f"bad number literal {text!r}")
    return Num(Fraction(m.group(1)), m.group(2) or None)


class _Source:
    def __init__(self, text: str, file: str):
        self.text = text
        self.file = file

    def span(self, tok: Token, end: Optional[Token] = None) -> SourceSpan:
        length = tok.length
        if end is not None and end.line == tok.line and end.offset >= tok.offset:
            length = end.offset + end.length - tok.offset
        return SourceSpan(self.file, tok.line, tok.column, length)


def tokenize(text: str, src: _Source, diags: list, keep_newlines: bool = False) -> list:
    out = []
    pos = 0
    line = 1
    line_start = 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            # Report one diagnostic per run of unrecognized characters.
            start = pos
            while pos < n and _TOKEN_RE.match(text, pos) is None:
                pos += 1
                if text[pos - 1] == "\n":
                    pos -= 1
                    break
            bad = text[start:pos] or text[start]
            diags.append(
                Diagnostic(
                    "error",
                    f"unexpected character(s) {bad!r}",
                    SourceSpan(src.file, line, start - line_start + 1, max(len(bad), 1)),
                    "lex",
                )
            )
            if pos == start:
                pos += 1
            continue
        kind = m.lastgroup
        tok_text = m.group()
        if kind == "nl":
            if keep_newlines:
                out.append(Token("nl", "\n", line, pos - line_start + 1, pos))
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            out.append(Token(kind, tok_text, line, pos - line_start + 1, pos))
        pos = m.end()
    out.append(Token("eof", "", line, pos - line_start + 1, pos))
    return out


# ---------------------------------------------------------------------------
# Parser core
# ---------------------------------------------------------------------------


class _Error(Exception):
    def __init__(self, message: str, tok: Token, code: str = "syntax"):
        super().__init__(message)
        self.message = message
        self.tok = tok
        self.code = code


def _describe(tok: Token) -> str:
    return "end of input" if tok.kind == "eof" else repr(tok.text)


class _Parser:
    TOP = ("predicate", "activity", "plan")

    def __init__(self, tokens: list, src: _Source, diags: list):
        self.toks = tokens
        self.i = 0
        self.src = src
        self.diags = diags

    # -- token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def advance(self) -> Token:
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("punct", "arrow", "rel", "ident") and t.text == text

    def accept(self, text: str) -> Optional[Token]:
        if self.at(text):
            return self.advance()
        return None

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise _Error(f"expected {text!r}, found {_describe(self.tok)}", self.tok)
        return self.advance()

    def ident(self, what: str = "identifier") -> Token:
        if self.tok.kind != "ident":
            raise _Error(f"expected {what}, found {_describe(self.tok)}", self.tok)
        return self.advance()

    def error(self, e: _Error) -> None:
        self.diags.append(Diagnostic("error", e.message, self.src.span(e.tok), e.code))

    def sync(self, start: int, stops=None) -> None:
        """Skip to the next top-level statement keyword at brace depth zero."""
        stops = stops or self.TOP
        depth = 0
        j = start
        while self.toks[j].kind != "eof":
            t = self.toks[j]
            # A keyword followed by a name restarts even inside unbalanced braces.
            if j > start and j >= self.i and t.kind == "ident" and t.text in stops and self.toks[j + 1].kind == "ident":
                break
            if t.kind == "punct" and t.text == "{":
                depth += 1
            elif t.kind == "punct" and t.text == "}":
                depth = max(depth - 1, 0)
                if depth == 0 and j >= self.i:
                    j += 1
                    if self.toks[j].kind == "punct" and self.toks[j].text == ";":
                        j += 1
                    break
            elif depth == 0 and j > start and j >= self.i:
                if t.kind == "ident" and t.text in stops:
                    break
                if t.kind == "punct" and t.text == ";":
                    j += 1
                    break
            j += 1
        self.i = max(j, self.i)

    # -- terms, atoms, cubes
    def term(self):
        t = self.tok
        if t.kind == "var":
            self.advance()
            return Var(t.text[1:])
        if t.kind == "ident":
            self.advance()
            return Const(t.text)
        if t.kind == "num":
            self.advance()
            return parse_number(t.text)
        raise _Error(f"expected a term, found {_describe(t)}", t)

    def number(self) -> Num:
        t = self.tok
        if t.kind != "num":
            raise _Error(f"expected a number, found {_describe(t)}", t)
        self.advance()
        return parse_number(t.text)

    def atom(self, spans: Optional[list] = None) -> Atom:
        open_tok = self.expect("(")
        pred = self.ident("predicate name").text
        args = []
        while not self.at(")"):
            if self.tok.kind == "eof":
                raise _Error("unterminated atom", open_tok)
            args.append(self.term())
        close_tok = self.expect(")")
        atom = Atom(pred, tuple(args))
        if spans is not None:
            spans.append((atom, self.src.span(open_tok, close_tok)))
        return atom

    def atoms_until(self, stops: tuple, spans: Optional[list] = None) -> list:
        out = []
        while self.at("("):
            out.append(self.atom(spans))
        return out

    def constraint(self) -> Constraint:
        left = self.term()
        if self.at("in"):
            self.advance()
            self.expect("[")
            lo = self.number()
            self.expect(",")
            hi = self.number()
            self.expect("]")
            return Constraint(left, "in", Interval(lo, hi))
        if self.tok.kind != "rel":
            raise _Error(f"expected a relation, found {_describe(self.tok)}", self.tok)
        rel = self.advance().text
        right = self.term()
        return Constraint(left, rel, right)

    def constraint_block(self) -> list:
        self.expect("{")
        out = []
        if not self.at("}"):
            out.append(self.constraint())
            while self.accept(","):
                out.append(self.constraint())
        self.expect("}")
        return out

    def cube(self, spans: Optional[list] = None) -> Cube:
        atoms = self.atoms_until((), spans)
        constraints = self.constraint_block() if self.at("{") else []
        return Cube(frozenset(atoms), frozenset(constraints))

    def id_list(self) -> list:
        self.expect("[")
        out = []
        if not self.at("]"):
            out.append(self.ident().text)
            while self.accept(","):
                out.append(self.ident().text)
        self.expect("]")
        return out


# ---------------------------------------------------------------------------
# Library parsing
# ---------------------------------------------------------------------------


@dataclass
class _LibraryBuilder:
    predicates: dict = field(default_factory=dict)
    activities: dict = field(default_factory=dict)
    plans: dict = field(default_factory=dict)
    spans: dict = field(default_factory=dict)  # subject -> SourceSpan
    atom_spans: list = field(default_factory=list)  # (subject, atom, span)

    def library(self) -> PlanLibrary:
        return PlanLibrary(self.predicates, self.activities, self.plans)


class _LibraryParser(_Parser):
    def __init__(self, tokens, src, diags, builder: _LibraryBuilder, extra_top=()):
        super().__init__(tokens, src, diags)
        self.b = builder
        self.TOP = tuple(self.TOP) + tuple(extra_top)

    def statement(self) -> None:
        kw = self.tok
        if self.at("predicate"):
            self.predicate_decl()
        elif self.at("activity"):
            self.activity_decl()
        elif self.at("plan"):
            self.plan_decl()
        else:
            raise _Error(f"expected a statement, found {_describe(kw)}", kw)

    def predicate_decl(self) -> None:
        self.expect("predicate")
        while True:
            name = self.ident("predicate name")
            self.expect("/")
            ar_tok = self.tok
            ar = self.number()
            if ar.unit or ar.value.denominator != 1 or ar.value < 0:
                raise _Error("arity must be a non-negative integer", ar_tok)
            arity = int(ar.value)
            prev = self.b.predicates.get(name.text)
            if prev is not None and prev != arity:
                self.diags.append(
                    Diagnostic(
                        "error",
                        f"predicate {name.text} redeclared with arity {arity} (was {prev})",
                        self.src.span(name),
                        "redeclared",
                    )
                )
            else:
                self.b.predicates[name.text] = arity
                self.b.spans.setdefault(("predicate", name.text), self.src.span(name))
            if not self.accept(","):
                break
        self.expect(";")

    def _duplicate(self, kind: str, name: Token, table: dict) -> bool:
        if name.text in table:
            self.diags.append(
                Diagnostic("error", f"duplicate {kind} {name.text}", self.src.span(name), "duplicate")
            )
            return True
        return False

    def activity_decl(self) -> None:
        self.expect("activity")
        name = self.ident("activity name")
        subject = ("activity", name.text)
        self.expect("{")
        kernel = None
        tol_atoms: list = []
        tol_constraints: list = []
        spans: list = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise _Error("unterminated activity block", name)
            if self.accept("kernel"):
                self.expect(":")
                kernel = self.cube(spans)
                self.expect(";")
            elif self.accept("tolerance"):
                self.expect(":")
                while True:
                    if self.accept("atoms"):
                        self.expect("[")
                        tol_atoms.extend(self.atoms_until((), spans))
                        self.expect("]")
                    elif self.accept("constraints"):
                        tol_constraints.extend(self.constraint_block())
                    else:
                        break
                self.expect(";")
            else:
                raise _Error(f"expected 'kernel' or 'tolerance', found {_describe(self.tok)}", self.tok)
        self.expect("}")
        self.accept(";")
        if kernel is None:
            self.diags.append(
                Diagnostic("error", f"activity {name.text} has no kernel", self.src.span(name), "kernel")
            )
            kernel = Cube()
        if self._duplicate("activity", name, self.b.activities):
            return
        self.b.activities[name.text] = ActivityPrototype(name.text, kernel, frozenset(tol_constraints), frozenset(tol_atoms))
        self.b.spans[subject] = self.src.span(name)
        self.b.atom_spans.extend((subject, a, s) for a, s in spans)

    def plan_decl(self) -> None:
        self.expect("plan")
        name = self.ident("plan name")
        subject = ("plan", name.text)
        self.expect("{")
        places: dict = {}
        transitions: list = []
        initial: list = []
        tol_acts: list = []
        refines: list = []
        spans: list = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise _Error("unterminated plan block", name)
            if self.accept("places"):
                self.expect(":")
                while True:
                    pid = self.ident("place name")
                    aid = pid
                    if self.accept("="):
                        aid = self.ident("activity name")
                    if pid.text in places:
                        self.diags.append(
                            Diagnostic("error", f"duplicate place {pid.text}", self.src.span(pid), "duplicate")
                        )
                    places[pid.text] = aid.text
                    if not self.accept(","):
                        break
                self.expect(";")
            elif self.accept("transitions"):
                self.expect("{")
                while not self.at("}"):
                    if self.tok.kind == "eof":
                        raise _Error("unterminated transitions block", name)
                    pre = self.id_list()
                    self.expect("->")
                    post = self.id_list()
                    event = Cube()
                    if self.accept("on"):
                        event = self.cube(spans)
                    self.expect(";")
                    transitions.append(Transition(frozenset(pre), frozenset(post), event))
                self.expect("}")
                self.accept(";")
            elif self.accept("initial"):
                self.expect(":")
                initial = self.id_list()
                self.expect(";")
            elif self.accept("tolerance-activities"):
                self.expect(":")
                tol_acts = self.id_list()
                self.expect(";")
            elif self.accept("refines"):
                self.expect(":")
                refines = self.id_list()
                self.expect(";")
            else:
                raise _Error(
                    "expected 'places', 'transitions', 'initial', 'tolerance-activities' or 'refines', "
                    f"found {_describe(self.tok)}",
                    self.tok,
                )
        self.expect("}")
        self.accept(";")
        if self._duplicate("plan", name, self.b.plans):
            return
        self.b.plans[name.text] = PlanPrototype(
            name.text, places, tuple(transitions), frozenset(initial), frozenset(tol_acts), frozenset(refines)
        )
        self.b.spans[subject] = self.src.span(name)
        self.b.atom_spans.extend((subject, a, s) for a, s in spans)

    def run(self, other=None) -> None:
        """Parse statements until EOF.  ``other`` handles extra keywords."""
        while self.tok.kind != "eof":
            start = self.i
            try:
                if other is not None and self.tok.kind == "ident" and self.tok.text in other:
                    other[self.tok.text]()
                else:
                    self.statement()
            except _Error as e:
                self.error(e)
                self.sync(start)
                if self.i == start:
                    self.advance()


def _by_position(diags: list) -> list:
    return sorted(diags, key=lambda d: (d.span.file, d.span.line, d.span.column) if d.span else ("", 0, 0))


def _as_text(source: Union[str, bytes], file: str, diags: list) -> Optional[str]:
    """Decoded text, or None (with a diagnostic) when the bytes are not UTF-8."""
    if isinstance(source, bytes):
        try:
            return source.decode("utf-8")
        except UnicodeDecodeError as e:
            line = source.count(b"\n", 0, e.start) + 1
            column = e.start - (source.rfind(b"\n", 0, e.start) + 1) + 1
            diags.append(
                Diagnostic("error", f"input is not valid UTF-8: {e.reason}", SourceSpan(file, line, column, 1), "encoding")
            )
            return None
    return source


def _attach_spans(diags: list, builder: _LibraryBuilder, file: str) -> list:
    out = []
    for d in diags:
        span = d.span
        if span is None and d.subject:
            subject = d.subject[:2]
            if len(d.subject) > 2:
                for subj, atom, s in builder.atom_spans:
                    if subj == subject and atom == d.subject[2]:
                        span = s
                        break
            if span is None:
                span = builder.spans.get(subject)
        if span is None:
            span = SourceSpan(file, 1, 1, 1)
        out.append(Diagnostic(d.severity, d.message, span, d.code, d.subject))
    return out


def _parse_library_into(text: str, file: str, builder: _LibraryBuilder, diags: list, other=None) -> None:
    src = _Source(text, file)
    toks = tokenize(text, src, diags)
    parser = _LibraryParser(toks, src, diags, builder, extra_top=tuple(other or ()))
    parser.run(other(parser) if callable(other) else None)


def check_library(source: Union[str, bytes], file: str = "<input>") -> tuple:
    """``(library or None, diagnostics)``; never raises on malformed input."""
    diags: list = []
    text = _as_text(source, file, diags)
    if text is None:
        return None, diags
    builder = _LibraryBuilder()
    _parse_library_into(text, file, builder, diags)
    lib = builder.library()
    diags = _by_position(diags + _attach_spans(validate(lib), builder, file))
    errors = [d for d in diags if d.severity == "error"]
    return (None if errors else lib), diags


def parse_library(source: Union[str, bytes], file: str = "<input>") -> PlanLibrary:
    """Parse and validate a library; raises :class:`ParseFailed`."""
    lib, diags = check_library(source, file)
    if lib is None:
        raise ParseFailed(diags)
    return lib


def load_library(path: Union[str, Path]) -> PlanLibrary:
    path = Path(path)
    return parse_library(path.read_bytes(), str(path))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def format_atom(a: Atom) -> str:
    return str(a)


def format_constraint(c: Constraint) -> str:
    return str(c)


def format_cube(c: Cube) -> str:
    parts = [format_atom(a) for a in c.sorted_atoms()]
    if c.constraints:
        parts.append("{ " + ", ".join(format_constraint(k) for k in c.sorted_constraints()) + " }")
    return " ".join(parts)


def serialize(lib: PlanLibrary) -> str:
    """Canonical text of a library; ``parse_library`` inverts it."""
    blocks = []
    if lib.predicates:
        decls = [f"{name}/{lib.predicates[name]}" for name in sorted(lib.predicates)]
        blocks.append("\n".join(f"predicate {d};" for d in decls))
    for aid in sorted(lib.activities):
        act = lib.activities[aid]
        lines = [f"activity {aid} {{"]
        kernel = format_cube(act.kernel)
        lines.append(f"  kernel: {kernel};" if kernel else "  kernel: ;")
        if act.tolerance_atoms or act.tolerance_constraints:
            tol = []
            if act.tolerance_atoms:
                atoms = " ".join(format_atom(a) for a in sorted(act.tolerance_atoms, key=Atom.key))
                tol.append(f"atoms [{atoms}]")
            if act.tolerance_constraints:
                cons = ", ".join(format_constraint(c) for c in sorted(act.tolerance_constraints, key=Constraint.key))
                tol.append(f"constraints {{ {cons} }}")
            lines.append("  tolerance: " + " ".join(tol) + ";")
        lines.append("}")
        blocks.append("\n".join(lines))
    for pid in sorted(lib.plans):
        p = lib.plans[pid]
        lines = [f"plan {pid} {{"]
        places = [pl if p.places[pl] == pl else f"{pl} = {p.places[pl]}" for pl in sorted(p.places)]
        if places:
            lines.append("  places: " + ", ".join(places) + ";")
        if p.transitions:
            lines.append("  transitions {")
            for t in p.transitions:
                text = f"    [{', '.join(sorted(t.pre))}] -> [{', '.join(sorted(t.post))}]"
                if t.event:
                    text += " on " + format_cube(t.event)
                lines.append(text + ";")
            lines.append("  }")
        lines.append(f"  initial: [{', '.join(sorted(p.initial_marking))}];")
        if p.tolerance_activities:
            lines.append(f"  tolerance-activities: [{', '.join(sorted(p.tolerance_activities))}];")
        if p.refines:
            lines.append(f"  refines: [{', '.join(sorted(p.refines))}];")
        lines.append("}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------


def check_scenario(source: Union[str, bytes], file: str = "<input>", predicates=None) -> tuple:
    """``(scenario or None, diagnostics)`` for ``.obs`` text."""
    diags: list = []
    text = _as_text(source, file, diags)
    if text is None:
        return None, diags
    src = _Source(text, file)
    toks = tokenize(text, src, diags, keep_newlines=True)
    p = _Parser(toks, src, diags)
    entries: dict = {}  # time -> {"obs": Cube | None, "mask": mask | None}
    last_time = None
    while p.tok.kind != "eof":
        if p.tok.kind == "nl":
            p.advance()
            continue
        start = p.tok
        try:
            if not (p.tok.kind == "ident" and p.tok.text == "t"):
                raise _Error(f"expected 't=<n>', found {_describe(p.tok)}", p.tok)
            p.advance()
            p.expect("=")
            ttok = p.tok
            num = p.number()
            if num.unit or num.value.denominator != 1:
                raise _Error("time index must be an integer", ttok)
            time = int(num.value)
            if last_time is not None and time < last_time:
                raise _Error(f"time {time} goes backwards (after {last_time})", ttok, "order")
            slot = entries.setdefault(time, {"obs": None, "mask": None})
            kw = p.ident("'obs' or 'visible'")
            if kw.text == "obs":
                if slot["obs"] is not None:
                    raise _Error(f"second observation at t={time}", ttok, "order")
                atoms = []
                spans: list = []
                while p.tok.kind not in ("nl", "eof"):
                    atoms.append(p.atom(spans))
                for a, s in spans:
                    if not a.is_ground():
                        diags.append(Diagnostic("error", "observations must be ground", s, "ground"))
                    elif predicates is not None:
                        arity = predicates.get(a.predicate)
                        if arity is None:
                            diags.append(Diagnostic("error", f"undeclared predicate {a.predicate!r}", s, "predicate"))
                        elif arity != a.arity:
                            diags.append(
                                Diagnostic(
                                    "error", f"{a.predicate} expects {arity} argument(s), got {a.arity}", s, "arity"
                                )
                            )
                slot["obs"] = Cube(frozenset(atoms))
            elif kw.text == "visible":
                if slot["mask"] is not None:
                    raise _Error(f"second visibility line at t={time}", ttok, "order")
                names = []
                while p.tok.kind not in ("nl", "eof"):
                    names.append(p.ident("predicate name").text)
                if names == ["all"]:
                    slot["mask"] = ALL
                else:
                    slot["mask"] = ObservabilityMask.only(names)
            else:
                raise _Error(f"expected 'obs' or 'visible', found {kw.text!r}", kw)
            last_time = time
            if p.tok.kind not in ("nl", "eof"):
                raise _Error(f"unexpected {_describe(p.tok)} at end of line", p.tok)
        except _Error as e:
            p.error(e)
            while p.tok.kind not in ("nl", "eof"):
                p.advance()
        if p.tok is start:
            p.advance()
    diags = _by_position(diags)
    if any(d.severity == "error" for d in diags):
        return None, diags
    steps = []
    mask = ALL
    for time in sorted(entries):
        slot = entries[time]
        if slot["mask"] is not None:
            mask = slot["mask"]
        steps.append(ScenarioStep(time, slot["obs"] or Cube(), mask))
    return Scenario(tuple(steps)), diags


def parse_scenario(source: Union[str, bytes], file: str = "<input>", predicates=None) -> Scenario:
    scenario, diags = check_scenario(source, file, predicates)
    if scenario is None:
        raise ParseFailed(diags)
    return scenario


def serialize_scenario(scenario: Scenario) -> str:
    lines = []
    mask = ALL
    for st in scenario.steps:
        if st.mask != mask:
            lines.append(f"t={st.time} visible {st.mask}")
            mask = st.mask
        atoms = " ".join(format_atom(a) for a in st.obs.sorted_atoms())
        lines.append(f"t={st.time} obs {atoms}".rstrip())
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# Simulation scripts
# ---------------------------------------------------------------------------


@dataclass
class ScriptFile:
    library: PlanLibrary
    script: object  # sim.GroundTruthScript
    noise: object  # sim.NoiseConfig
    config: object  # sim.SimConfig


class _ScriptParser:
    """Extra statements accepted in script files."""

    def __init__(self, parser: _LibraryParser, base: Path):
        from . import sim

        self.p = parser
        self.base = base
        self.sim = sim
        self.library_paths: list = []
        self.executions: list = []
        self.tracks: dict = {}
        self.landmarks: list = []
        self.horizon = None
        self.noise: dict = {"occlusions": [], "fictitious": [], "interactions": [], "drop": Fraction(0), "seed": None}
        self.config: dict = {}

    def handlers(self) -> dict:
        return {
            "library": self.library,
            "execution": self.execution,
            "track": self.track,
            "landmark": self.landmark,
            "noise": self.noise_block,
            "config": self.config_block,
            "horizon": self.horizon_decl,
        }

    def _time(self) -> int:
        p = self.p
        t = p.ident("'t'")
        if t.text != "t":
            raise _Error(f"expected 't=<n>', found {t.text!r}", t)
        p.expect("=")
        return self._int()

    def _int(self) -> int:
        tok = self.p.tok
        n = self.p.number()
        if n.unit or n.value.denominator != 1:
            raise _Error("expected an integer", tok)
        return int(n.value)

    def _vec(self) -> tuple:
        a = self.p.number()
        b = self.p.number()
        return (a.value, b.value)

    def library(self) -> None:
        p = self.p
        p.expect("library")
        tok = p.tok
        if tok.kind != "string":
            raise _Error("expected a quoted path", tok)
        p.advance()
        p.expect(";")
        self.library_paths.append((tok, tok.text[1:-1]))

    def execution(self) -> None:
        p = self.p
        p.expect("execution")
        plan = p.ident("plan name").text
        p.expect("{")
        bindings: dict = {}
        schedule = []
        while not p.at("}"):
            if p.tok.kind == "eof":
                raise _Error("unterminated execution block", p.tok)
            if p.accept("bind"):
                while True:
                    vt = p.tok
                    if vt.kind != "var":
                        raise _Error("expected a variable", vt)
                    p.advance()
                    p.expect("=")
                    obj = p.ident("object name").text
                    bindings[Var(vt.text[1:])] = Const(obj)
                    if not p.accept(","):
                        break
                p.expect(";")
                continue
            time = self._time()
            if p.accept("end"):
                schedule.append(self.sim.ScheduleEntry(time, None))
            else:
                marking = frozenset(p.id_list())
                tol = None
                if p.accept("tolerance"):
                    tol = p.ident("activity name").text
                schedule.append(self.sim.ScheduleEntry(time, marking, tol))
            p.expect(";")
        p.expect("}")
        p.accept(";")
        self.executions.append(self.sim.Execution(plan, Substitution(bindings), tuple(schedule)))

    def track(self) -> None:
        p = self.p
        p.expect("track")
        obj = p.ident("object name").text
        p.expect("{")
        entries = list(self.tracks.get(obj, ()))
        while not p.at("}"):
            if p.tok.kind == "eof":
                raise _Error("unterminated track block", p.tok)
            time = self._time()
            if p.accept("gone"):
                entries.append(self.sim.TrackEntry(time, gone=True))
            else:
                pos = vel = None
                while p.at("pos") or p.at("vel"):
                    if p.accept("pos"):
                        pos = self._vec()
                    else:
                        p.expect("vel")
                        vel = self._vec()
                entries.append(self.sim.TrackEntry(time, pos, vel))
            p.expect(";")
        p.expect("}")
        p.accept(";")
        self.tracks[obj] = tuple(entries)

    def landmark(self) -> None:
        p = self.p
        p.expect("landmark")
        name = p.ident("landmark name").text
        p.expect("pos")
        pos = self._vec()
        p.expect(";")
        self.landmarks.append((name, pos))

    def horizon_decl(self) -> None:
        p = self.p
        p.expect("horizon")
        a = self._int()
        p.expect("to")
        b = self._int()
        p.expect(";")
        self.horizon = (a, b)

    def noise_block(self) -> None:
        p = self.p
        p.expect("noise")
        p.expect("{")
        while not p.at("}"):
            if p.tok.kind == "eof":
                raise _Error("unterminated noise block", p.tok)
            if p.accept("occlude"):
                start = self._time()
                p.expect("to")
                end = self._int()
                preds: list = []
                objs: list = []
                while p.at("predicates") or p.at("objects"):
                    if p.accept("predicates"):
                        preds += p.id_list()
                    else:
                        p.expect("objects")
                        objs += p.id_list()
                self.noise["occlusions"].append(self.sim.Occlusion(start, end, frozenset(preds), frozenset(objs)))
            elif p.at("fictitious") or p.at("interaction"):
                kind = p.advance().text
                time = self._time()
                atoms = []
                while p.at("("):
                    atoms.append(p.atom())
                for a in atoms:
                    if not a.is_ground():
                        raise _Error("noise atoms must be ground", p.tok)
                key = "fictitious" if kind == "fictitious" else "interactions"
                self.noise[key].append((time, Cube(frozenset(atoms))))
            elif p.accept("drop"):
                tok = p.tok
                rate = p.number()
                if rate.unit:
                    raise _Error("drop rate takes no unit", tok)
                self.noise["drop"] = rate.value
                if p.accept("seed"):
                    self.noise["seed"] = self._int()
            else:
                raise _Error(f"expected a noise item, found {_describe(p.tok)}", p.tok)
            p.expect(";")
        p.expect("}")
        p.accept(";")

    def config_block(self) -> None:
        p = self.p
        p.expect("config")
        p.expect("{")
        keys = {
            "cone-half-angle": "cone_half_angle",
            "close-radius": "close_radius",
            "speed-scale": "speed_scale",
        }
        while not p.at("}"):
            key = p.ident("config key")
            if key.text in keys:
                self.config[keys[key.text]] = p.number().value
            elif key.text == "speed-unit":
                tok = p.tok
                if tok.kind != "string":
                    raise _Error("expected a quoted unit", tok)
                p.advance()
                self.config["speed_unit"] = tok.text[1:-1] or None
            else:
                raise _Error(f"unknown config key {key.text!r}", key)
            p.expect(";")
        p.expect("}")
        p.accept(";")


def check_script(
    source: Union[str, bytes], file: str = "<input>", seed: Optional[int] = None
) -> tuple:
    """``(ScriptFile or None, diagnostics)``.  ``seed`` overrides the script's."""
    from . import sim

    diags: list = []
    text = _as_text(source, file, diags)
    if text is None:
        return None, diags
    builder = _LibraryBuilder()
    base = Path(file).parent
    holder: dict = {}

    def make(parser):
        sp = _ScriptParser(parser, base)
        holder["sp"] = sp
        return sp.handlers()

    extra = ("library", "execution", "track", "landmark", "noise", "config", "horizon")
    src = _Source(text, file)
    toks = tokenize(text, src, diags)
    parser = _LibraryParser(toks, src, diags, builder, extra_top=extra)
    parser.run(make(parser))
    sp = holder["sp"]
    for tok, rel in sp.library_paths:
        path = (base / rel) if not Path(rel).is_absolute() else Path(rel)
        try:
            data = path.read_bytes()
        except OSError as e:
            diags.append(Diagnostic("error", f"cannot read library {rel}: {e.strerror}", src.span(tok), "io"))
            continue
        lib_text = _as_text(data, str(path), diags)
        if lib_text is not None:
            _parse_library_into(lib_text, str(path), builder, diags)
    lib = builder.library()
    diags = _by_position(diags + _attach_spans(validate(lib), builder, file))
    if any(d.severity == "error" for d in diags):
        return None, diags
    try:
        noise = sim.NoiseConfig(
            occlusions=tuple(sp.noise["occlusions"]),
            fictitious=tuple(sp.noise["fictitious"]),
            drop_rate=sp.noise["drop"],
            seed=seed if seed is not None else sp.noise["seed"],
            interactions=tuple(sp.noise["interactions"]),
        )
        script = sim.GroundTruthScript(
            executions=tuple(sp.executions),
            world=sim.World(
                tuple(sim.Track(obj, entries) for obj, entries in sorted(sp.tracks.items())),
                tuple(sp.landmarks),
            ),
            horizon=sp.horizon,
        )
        config = sim.SimConfig(**sp.config)
        sim.check_script(script, lib)
    except sim.ScriptError as e:
        diags.append(Diagnostic("error", str(e), SourceSpan(file, 1, 1, 1), "script"))
        return None, diags
    return ScriptFile(lib, script, noise, config), diags


def parse_script(source: Union[str, bytes], file: str = "<input>", seed: Optional[int] = None) -> ScriptFile:
    result, diags = check_script(source, file, seed)
    if result is None:
        raise ParseFailed(diags)
    return result
