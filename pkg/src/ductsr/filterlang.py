"""Constraint filtering of candidate equations.

A small, fixed-shape answer-set program: equation facts plus threshold,
exclusion and requirement rules.  The free choice rule over equations means
every subset of the eligible equations that satisfies the requirements is
an answer set; :func:`solve` reports the maximal one.

Facts file syntax (one statement per line, ``%`` starts a comment)::

    eq(9, 17, 45, "Re*(2.18-8.46*Y**2)*(1-3.89*Z**2)").
    contains_re(9).

Constraint program syntax (``#`` starts a comment)::

    max_complexity = 20
    max_loss = 100
    forbid = x3, y3, x4
    require = re
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional

from . import expr as ex

FORBIDDABLE = ("x2", "y2", "z2", "x3", "y3", "z3", "x4", "y4", "z4", "nested")
REQUIRABLE = ("re", "x", "y", "z")


class FactsError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class ProgramError(ValueError):
    pass


@dataclass(frozen=True)
class EquationFact:
    id: int
    complexity: int
    loss: int
    expression_text: str
    features: ex.ExprFeatures

    def has(self, feature: str) -> bool:
        return getattr(self.features, ex.feature_field(feature))


@dataclass(frozen=True)
class ConstraintProgram:
    max_complexity: Optional[int] = None  # None = unbounded
    max_loss: Optional[int] = None
    forbidden_features: frozenset = frozenset()
    required_features: tuple = ()

    def __post_init__(self):
        for name in ("max_complexity", "max_loss"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ProgramError(f"{name} must be >= 0")
        bad = set(self.forbidden_features) - set(FORBIDDABLE)
        if bad:
            raise ProgramError(f"cannot forbid {sorted(bad)}; allowed: {', '.join(FORBIDDABLE)}")
        bad = set(self.required_features) - set(REQUIRABLE)
        if bad:
            raise ProgramError(f"cannot require {sorted(bad)}; allowed: {', '.join(REQUIRABLE)}")
        object.__setattr__(self, "forbidden_features", frozenset(self.forbidden_features))
        object.__setattr__(self, "required_features", tuple(self.required_features))


@dataclass
class Selection:
    selected: list
    status: str  # "SAT" or "UNSAT"
    violation: Optional[str] = None

    @property
    def ids(self) -> list:
        return [f.id for f in self.selected]

    def to_json(self) -> str:
        doc = {
            "status": self.status,
            "selected": [
                {
                    "id": f.id,
                    "complexity": f.complexity,
                    "loss": f.loss,
                    "expression": f.expression_text,
                }
                for f in self.selected
            ],
            "violations": [self.violation] if self.violation else [],
        }
        return json.dumps(doc, indent=2) + "\n"

    def render(self) -> str:
        lines = ["SELECTED EQUATIONS", "------------------"]
        for f in self.selected:
            lines += ["", f"ID {f.id}: {f.expression_text}", f"Complexity: {f.complexity}, Loss: {f.loss}"]
        if self.status != "SAT":
            lines += ["", f"UNSATISFIABLE: {self.violation}"]
        return "\n".join(lines) + "\n"


def round_loss(loss: float) -> int:
    """Nearest integer, halves away from zero."""
    if not math.isfinite(loss):
        raise ValueError(f"cannot round non-finite loss {loss}")
    return int(math.copysign(math.floor(abs(loss) + 0.5), loss))


# --------------------------------------------------------------------------
# fact bases


def facts_from_frontier(frontier) -> list:
    out = []
    for entry in frontier:
        out.append(
            EquationFact(
                id=entry.id,
                complexity=entry.complexity,
                loss=round_loss(entry.loss),
                expression_text=ex.to_string(entry.expression),
                features=ex.extract_features(entry.expression),
            )
        )
    return out


def format_facts(facts: Iterable[EquationFact]) -> str:
    """Render a fact base in the same syntax :func:`parse_facts_file` reads."""
    blocks = []
    for f in sorted(facts, key=lambda f: f.id):
        text = f.expression_text.replace("\\", "\\\\").replace('"', '\\"')
        lines = [f'eq({f.id}, {f.complexity}, {f.loss}, "{text}").']
        names = f.features.names()
        lines += [f"contains_{n}({f.id})." for n in ex.FEATURE_NAMES if n in names]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


_EQ_RE = re.compile(r'^eq\(\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*"((?:[^"\\]|\\.)*)"\s*\)\s*\.$')
_CONTAINS_RE = re.compile(r"^contains_([a-z0-9]+)\(\s*(-?\d+)\s*\)\s*\.$")


def _strip_comment(line: str) -> str:
    in_string = False
    for i, ch in enumerate(line):
        if ch == '"' and (i == 0 or line[i - 1] != "\\"):
            in_string = not in_string
        elif ch == "%" and not in_string:
            return line[:i]
    return line


def parse_facts_file(text: str) -> list:
    """Parse a facts listing into EquationFacts ordered by id.

    Features are recomputed from each expression; ``contains_*`` lines must
    agree with them.
    """
    eqs = {}
    asserted = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        m = _EQ_RE.match(line)
        if m:
            fid, comp, loss = (int(m.group(i)) for i in (1, 2, 3))
            body = m.group(4).replace('\\"', '"').replace("\\\\", "\\")
            if fid in eqs:
                raise FactsError(f"duplicate equation id {fid}", lineno)
            if comp < 1 or loss < 0:
                raise FactsError("complexity must be >= 1 and loss >= 0", lineno)
            try:
                tree = ex.parse(body)
            except ex.ExprSyntaxError as exc:
                raise FactsError(f"bad expression: {exc}", lineno) from exc
            eqs[fid] = (comp, loss, body, ex.extract_features(tree))
            continue
        m = _CONTAINS_RE.match(line)
        if m:
            name, fid = m.group(1), int(m.group(2))
            if name not in ex.FEATURE_NAMES:
                raise FactsError(f"unknown feature predicate contains_{name}", lineno)
            asserted.append((lineno, name, fid))
            continue
        raise FactsError(f"syntax error: {raw.strip()!r}", lineno)

    for lineno, name, fid in asserted:
        if fid not in eqs:
            raise FactsError(f"contains_{name}({fid}) refers to unknown equation id {fid}", lineno)
        features = eqs[fid][3]
        if not getattr(features, ex.feature_field(name)):
            raise FactsError(
                f"contains_{name}({fid}) contradicts expression {eqs[fid][2]!r}", lineno
            )
    return [
        EquationFact(fid, comp, loss, body, feats)
        for fid, (comp, loss, body, feats) in sorted(eqs.items())
    ]


# --------------------------------------------------------------------------
# constraint programs


def _split_list(value: str) -> list:
    return [v.strip().lower() for v in value.split(",") if v.strip()]


def parse_program(text: str) -> ConstraintProgram:
    kwargs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ProgramError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in ("max_complexity", "max_loss"):
            try:
                kwargs[key] = int(value)
            except ValueError:
                raise ProgramError(f"line {lineno}: {key} must be an integer") from None
        elif key == "forbid":
            kwargs["forbidden_features"] = frozenset(_split_list(value))
        elif key == "require":
            kwargs["required_features"] = tuple(dict.fromkeys(_split_list(value)))
        else:
            raise ProgramError(f"line {lineno}: unknown key {key!r}")
    return ConstraintProgram(**kwargs)


def format_program(program: ConstraintProgram) -> str:
    lines = []
    if program.max_complexity is not None:
        lines.append(f"max_complexity = {program.max_complexity}")
    if program.max_loss is not None:
        lines.append(f"max_loss = {program.max_loss}")
    if program.forbidden_features:
        lines.append("forbid = " + ", ".join(sorted(program.forbidden_features)))
    if program.required_features:
        lines.append("require = " + ", ".join(program.required_features))
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# evaluation


def _failures(fact: EquationFact, program: ConstraintProgram) -> list:
    out = []
    if program.max_complexity is not None and fact.complexity > program.max_complexity:
        out.append(f"complexity {fact.complexity} > {program.max_complexity}")
    if program.max_loss is not None and fact.loss > program.max_loss:
        out.append(f"loss {fact.loss} > {program.max_loss}")
    for feat in sorted(program.forbidden_features):
        if fact.has(feat):
            out.append(f"forbidden contains_{feat}")
    return out


def eligible(fact: EquationFact, program: ConstraintProgram) -> bool:
    return not _failures(fact, program)


def solve(facts: Iterable[EquationFact], program: ConstraintProgram) -> Selection:
    chosen = sorted((f for f in facts if eligible(f, program)), key=lambda f: f.id)
    for feat in program.required_features:
        if not any(f.has(feat) for f in chosen):
            return Selection(
                [], "UNSAT",
                f"requirement '{feat}' unmet: no eligible equation has contains_{feat}",
            )
    return Selection(chosen, "SAT")


@dataclass
class Verdict:
    id: int
    eligible: bool
    failures: list = field(default_factory=list)
    provides: list = field(default_factory=list)  # required features carried
    missing: list = field(default_factory=list)  # required features not carried

    def render(self) -> str:
        if self.eligible:
            text = f"ID {self.id}: eligible"
            if self.provides:
                text += "; provides " + ", ".join(self.provides)
        else:
            text = f"ID {self.id}: rejected: " + ", ".join(self.failures)
        if self.missing:
            text += "; missing " + ", ".join(f"contains_{m}" for m in self.missing)
        return text


def explain(facts: Iterable[EquationFact], program: ConstraintProgram) -> list:
    out = []
    for f in sorted(facts, key=lambda f: f.id):
        fails = _failures(f, program)
        provides = [r for r in program.required_features if f.has(r)]
        missing = [r for r in program.required_features if not f.has(r)]
        out.append(Verdict(f.id, not fails, fails, provides, missing))
    return out
