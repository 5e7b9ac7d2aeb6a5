"""Evolutionary symbolic regression with a complexity/loss Pareto archive.

Tournament GP over :mod:`ductsr.expr` trees.  Every admitted candidate has
its constants polished by stochastic hill climbing, is scored by plain MSE,
and is offered to the archive.  Parsimony lives entirely in the archive:
fitness itself carries no size penalty.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Optional

import numpy as np

from .expr import (
    BINARY_OPS,
    UNARY_OPS,
    VARIABLES,
    BinOp,
    Const,
    Expression,
    UnaryOp,
    Var,
    children,
    compile_expression,
    complexity,
    iter_nodes,
    parse,
    to_string,
    violates_nesting,
    with_constants,
)

MUTATION_MOVES = ("subtree", "constant", "operator", "insert", "delete")
_COLUMN_OF = {"X": "x", "Y": "y", "Z": "z", "Re": "re"}


@dataclass
class SRConfig:
    n_iterations: int = 100
    max_size: int = 25
    population_size: int = 512
    tournament_size: int = 5
    p_crossover: float = 0.7
    p_mutation: float = 0.3
    constant_optimizer_steps: int = 32
    rng_seed: int = 0
    const_range: tuple = (-10.0, 10.0)
    variables: tuple = VARIABLES
    # rows used for fitness; final frontier losses use the full training set
    max_samples: int = 2000
    mutation_weights: dict = field(
        default_factory=lambda: {
            "subtree": 1.0,
            "constant": 1.0,
            "operator": 1.0,
            "insert": 1.0,
            "delete": 1.0,
        }
    )
    max_retries: int = 10
    # largest fresh subtree grown by mutation
    max_new_subtree: int = 7
    p_unary: float = 0.2
    # chance that a parent is drawn from the archive instead of a tournament
    p_archive_parent: float = 0.3
    n_islands: int = 1

    def __post_init__(self):
        if self.max_size < 1:
            raise ValueError("max_size must be >= 1")
        if not (self.population_size >= self.tournament_size >= 2):
            raise ValueError("need population_size >= tournament_size >= 2")
        for name in ("p_crossover", "p_mutation", "p_unary", "p_archive_parent"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.p_crossover + self.p_mutation > 1.0 + 1e-12:
            raise ValueError("p_crossover + p_mutation must not exceed 1")
        if self.n_iterations < 0 or self.constant_optimizer_steps < 0:
            raise ValueError("iteration counts must be non-negative")
        unknown = set(self.mutation_weights) - set(MUTATION_MOVES)
        if unknown:
            raise ValueError(f"unknown mutation moves {sorted(unknown)}")
        if any(w < 0 for w in self.mutation_weights.values()):
            raise ValueError("mutation weights must be non-negative")
        lo, hi = self.const_range
        if not lo < hi:
            raise ValueError("const_range must be increasing")


def is_valid(e: Expression, config: SRConfig) -> bool:
    return complexity(e) <= config.max_size and not violates_nesting(e)


# --------------------------------------------------------------------------
# Pareto archive


@dataclass(frozen=True)
class ParetoEntry:
    id: int
    complexity: int
    loss: float
    expression: Expression

    @cached_property
    def text(self) -> str:
        return to_string(self.expression)

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "complexity": self.complexity,
            "loss": self.loss,
            "expression": self.text,
        }


def make_entry(expression: Expression, loss: float, id: int = -1) -> ParetoEntry:
    return ParetoEntry(id, complexity(expression), float(loss), expression)


class ParetoFrontier:
    """Non-dominated (complexity, loss) set, kept sorted by complexity.

    Along the list complexity strictly increases and loss strictly
    decreases.  Exact (complexity, loss) ties keep the candidate whose
    printed expression sorts first.
    """

    def __init__(self, entries=()):
        self.entries: list[ParetoEntry] = []
        for e in entries:
            self.update(e)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def update(self, cand: ParetoEntry) -> bool:
        """Offer a candidate; returns True if it was archived."""
        if not math.isfinite(cand.loss):
            return False
        c, l = cand.complexity, cand.loss
        for i, e in enumerate(self.entries):
            if e.complexity <= c and e.loss <= l:
                if e.complexity == c and e.loss == l and cand.text < e.text:
                    self.entries[i] = cand
                    return True
                return False
        self.entries = [e for e in self.entries if not (c <= e.complexity and l <= e.loss)]
        self.entries.append(cand)
        self.entries.sort(key=lambda e: e.complexity)
        return True

    def best_loss(self) -> float:
        return min((e.loss for e in self.entries), default=math.inf)

    def with_ids(self) -> "ParetoFrontier":
        out = ParetoFrontier()
        out.entries = [
            ParetoEntry(i, e.complexity, e.loss, e.expression) for i, e in enumerate(self.entries)
        ]
        return out

    def by_id(self, id: int) -> ParetoEntry:
        for e in self.entries:
            if e.id == id:
                return e
        raise KeyError(f"no frontier entry with id {id}")

    def to_json(self) -> str:
        return json.dumps([e.as_dict() for e in self.entries], indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ParetoFrontier":
        out = cls()
        for item in json.loads(text):
            expr = parse(item["expression"])
            out.entries.append(
                ParetoEntry(int(item["id"]), int(item["complexity"]), float(item["loss"]), expr)
            )
        out.entries.sort(key=lambda e: e.complexity)
        return out


def pareto_update(frontier: ParetoFrontier, candidate: ParetoEntry) -> ParetoFrontier:
    frontier.update(candidate)
    return frontier


# --------------------------------------------------------------------------
# random trees and variation


def _leaf(config, rng):
    k = int(rng.integers(len(config.variables) + 1))
    if k == len(config.variables):
        lo, hi = config.const_range
        return Const(float(rng.uniform(lo, hi)))
    return Var(config.variables[k])


def _grow(config, rng, size, under_unary):
    if size <= 1 or (size == 2 and under_unary):
        return _leaf(config, rng)
    if size == 2:
        return UnaryOp(UNARY_OPS[int(rng.integers(2))], _leaf(config, rng))
    if not under_unary and rng.random() < config.p_unary:
        return UnaryOp(UNARY_OPS[int(rng.integers(2))], _grow(config, rng, size - 1, True))
    left = int(rng.integers(1, size - 1))
    op = BINARY_OPS[int(rng.integers(len(BINARY_OPS)))]
    return BinOp(op, _grow(config, rng, left, False), _grow(config, rng, size - 1 - left, False))


def random_expression(config: SRConfig, rng: np.random.Generator, size_budget: int,
                      under_unary: bool = False) -> Expression:
    """Random tree with complexity in ``[1, size_budget]``."""
    if size_budget < 1:
        raise ValueError("size_budget must be >= 1")
    size = int(rng.integers(1, size_budget + 1))
    return _grow(config, rng, size, under_unary)


def _nodes_with_parent(e):
    """Pre-order list of (node, parent) pairs."""
    out = []
    stack = [(e, None)]
    while stack:
        node, parent = stack.pop()
        out.append((node, parent))
        stack.extend((k, node) for k in reversed(children(node)))
    return out


def replace_at(e: Expression, index: int, new: Expression) -> Expression:
    """Return ``e`` with its pre-order node ``index`` replaced by ``new``."""
    counter = [0]

    def walk(node):
        i = counter[0]
        counter[0] += 1
        if i == index:
            counter[0] += complexity(node) - 1
            return new
        if isinstance(node, BinOp):
            left = walk(node.left)
            return BinOp(node.op, left, walk(node.right))
        if isinstance(node, UnaryOp):
            return UnaryOp(node.op, walk(node.child))
        return node

    return walk(e)


def _perturb(value, rng, scale):
    if value == 0.0:
        return float(scale * rng.standard_normal())
    return float(value * (1.0 + scale * rng.standard_normal()))


def _mutate_once(e, move, config, rng):
    nodes = _nodes_with_parent(e)
    size = len(nodes)
    if move == "subtree":
        i = int(rng.integers(size))
        node, parent = nodes[i]
        budget = min(config.max_new_subtree, config.max_size - size + complexity(node))
        if budget < 1:
            return None
        new = random_expression(config, rng, budget, under_unary=isinstance(parent, UnaryOp))
        return replace_at(e, i, new)
    if move == "constant":
        idx = [i for i, (n, _) in enumerate(nodes) if isinstance(n, Const)]
        if not idx:
            return None
        i = idx[int(rng.integers(len(idx)))]
        scale = 10.0 ** rng.uniform(-3, 0)
        new_value = _perturb(nodes[i][0].value, rng, scale)
        if not math.isfinite(new_value) or new_value == nodes[i][0].value:
            return None
        return replace_at(e, i, Const(new_value))
    if move == "operator":
        idx = [i for i, (n, _) in enumerate(nodes) if isinstance(n, (BinOp, UnaryOp))]
        if not idx:
            return None
        i = idx[int(rng.integers(len(idx)))]
        node = nodes[i][0]
        if isinstance(node, BinOp):
            ops = [o for o in BINARY_OPS if o != node.op]
            return replace_at(e, i, BinOp(ops[int(rng.integers(len(ops)))], node.left, node.right))
        other = "cube" if node.op == "square" else "square"
        return replace_at(e, i, UnaryOp(other, node.child))
    if move == "insert":
        i = int(rng.integers(size))
        node, _ = nodes[i]
        if rng.random() < 0.3:
            new = UnaryOp(UNARY_OPS[int(rng.integers(2))], node)
        else:
            op = BINARY_OPS[int(rng.integers(len(BINARY_OPS)))]
            budget = min(config.max_new_subtree, config.max_size - size - 1)
            if budget < 1:
                return None
            other = random_expression(config, rng, min(budget, 4))
            new = BinOp(op, node, other) if rng.random() < 0.5 else BinOp(op, other, node)
        return replace_at(e, i, new)
    if move == "delete":
        idx = [i for i, (n, _) in enumerate(nodes) if isinstance(n, (BinOp, UnaryOp))]
        if not idx:
            return None
        i = idx[int(rng.integers(len(idx)))]
        kids = children(nodes[i][0])
        return replace_at(e, i, kids[int(rng.integers(len(kids)))])
    raise ValueError(f"unknown mutation move {move!r}")


def mutate(e: Expression, config: SRConfig, rng: np.random.Generator) -> Expression:
    """Apply one randomly chosen move; returns ``e`` if no valid result is found."""
    moves = [m for m in MUTATION_MOVES if config.mutation_weights.get(m, 0.0) > 0]
    if not moves:
        return e
    w = np.array([config.mutation_weights[m] for m in moves], dtype=float)
    w /= w.sum()
    for _ in range(config.max_retries):
        move = moves[int(rng.choice(len(moves), p=w))]
        out = _mutate_once(e, move, config, rng)
        if out is not None and is_valid(out, config):
            return out
    return e


def crossover(a: Expression, b: Expression, config: SRConfig, rng: np.random.Generator) -> Expression:
    """Replace a random subtree of ``a`` with a random subtree of ``b``."""
    na = _nodes_with_parent(a)
    nb = list(iter_nodes(b))
    for _ in range(config.max_retries):
        i = int(rng.integers(len(na)))
        donor = nb[int(rng.integers(len(nb)))]
        out = replace_at(a, i, donor)
        if is_valid(out, config):
            return out
    return a


# --------------------------------------------------------------------------
# fitness and constants


def data_columns(data, target: Optional[str] = None):
    """Split records into a variable env and a target vector.

    ``data`` is a structured array with fields ``x, y, z, re, u, p`` or a
    mapping with the same keys.
    """
    env = {}
    for var, col in _COLUMN_OF.items():
        env[var] = np.ascontiguousarray(data[col], dtype=float)
    y = None if target is None else np.ascontiguousarray(data[target], dtype=float)
    return env, y


def _sse(pred, y):
    # caller owns the errstate; pred may be a scalar for constant trees
    d = pred - y
    if d.ndim == 0:
        d = np.full(y.shape, float(d))
    r = float(np.dot(d, d))
    return r if math.isfinite(r) else math.inf


def _mse(pred, y):
    with np.errstate(all="ignore"):
        return _sse(pred, y) / len(y)


def loss_of(e: Expression, env: Mapping[str, np.ndarray], y: np.ndarray) -> float:
    fn, c = compile_expression(e)
    with np.errstate(all="ignore"):
        return _mse(fn(env, c), y)


_MAX_EXPANSIONS = 30
_LOG_STEP_RANGE = (-8.0, 0.0)  # relative step scale, log10


def _hill_climb(fn, c, env, y, steps, rng):
    n = len(y)
    with np.errstate(all="ignore"):
        best = _sse(fn(env, c), y)
        if len(c) == 0 or steps == 0:
            return c, best / n
        ks = rng.integers(len(c), size=steps).tolist()
        scales = (10.0 ** rng.uniform(*_LOG_STEP_RANGE, size=steps)).tolist()
        noise = rng.standard_normal(steps).tolist()
        c = c.copy()
        i = 0
        while i < steps:
            k = ks[i]
            old = c[k]
            step = scales[i] * noise[i] * (old if old != 0.0 else 1.0)
            i += 1
            c[k] = old + step
            loss = _sse(fn(env, c), y)
            if not loss < best:
                # mirror the step before giving up on this coordinate
                step = -step
                c[k] = old + step
                loss = _sse(fn(env, c), y)
            if not loss < best:
                c[k] = old
                continue
            best = loss
            # accepted: keep doubling the step while it pays off
            for _ in range(_MAX_EXPANSIONS):
                prev = c[k]
                step *= 2.0
                c[k] = prev + step
                loss = _sse(fn(env, c), y)
                if not loss < best:
                    c[k] = prev
                    break
                best = loss
    return c, best / n


def fit_constants(e: Expression, env, y, steps: int, rng) -> tuple:
    """Hill-climb the constants of ``e``; returns ``(expression, mse)``."""
    fn, c = compile_expression(e)
    c2, loss = _hill_climb(fn, c, env, y, steps, rng)
    if len(c) and not np.array_equal(c2, c):
        e = with_constants(e, c2)
    return e, loss


def optimize_constants(e: Expression, env, y, steps: int, rng) -> Expression:
    """Coordinate-wise stochastic hill climbing on the constants of ``e``.

    Each step perturbs one constant by a log-uniformly drawn relative
    scale and keeps the change only if the MSE drops, so the result is
    never worse than the input.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    return fit_constants(e, env, y, steps, rng)[0]


# --------------------------------------------------------------------------
# evolution


@dataclass
class _Individual:
    expression: Expression
    loss: float
    size: int


def _tournament(pop, k, rng):
    idx = rng.integers(len(pop), size=k)
    return min((pop[i] for i in idx), key=lambda ind: (ind.loss, ind.size))


def evolve(
    config: SRConfig,
    train,
    target: str,
    callback: Optional[Callable[[int, ParetoFrontier], None]] = None,
) -> ParetoFrontier:
    """Run the GP loop and return the final frontier, ids in complexity order.

    ``callback(generation, archive)`` is invoked after initialization
    (generation 0) and after every generation.
    """
    if target not in ("u", "p"):
        raise ValueError(f"target must be 'u' or 'p', got {target!r}")
    env_full, y_full = data_columns(train, target)
    n = len(y_full)
    if n == 0:
        raise ValueError("empty training data")
    rng = np.random.default_rng(config.rng_seed)
    if n > config.max_samples:
        rows = np.sort(rng.choice(n, size=config.max_samples, replace=False))
        env = {k: v[rows] for k, v in env_full.items()}
        y = y_full[rows]
    else:
        env, y = env_full, y_full

    archive = ParetoFrontier()

    def admit(e):
        e, loss = fit_constants(e, env, y, config.constant_optimizer_steps, rng)
        size = complexity(e)
        archive.update(ParetoEntry(-1, size, loss, e))
        return _Individual(e, loss, size)

    n_isl = config.n_islands
    sizes = [config.population_size // n_isl + (i < config.population_size % n_isl) for i in range(n_isl)]
    islands = [[admit(random_expression(config, rng, config.max_size)) for _ in range(k)] for k in sizes]
    if callback:
        callback(0, archive)

    def parent(pop):
        if archive.entries and rng.random() < config.p_archive_parent:
            e = archive.entries[int(rng.integers(len(archive.entries)))]
            return e.expression
        return _tournament(pop, config.tournament_size, rng).expression

    for gen in range(1, config.n_iterations + 1):
        for isl, pop in enumerate(islands):
            offspring = []
            while len(offspring) < sizes[isl]:
                r = rng.random()
                if r < config.p_crossover:
                    child = crossover(parent(pop), parent(pop), config, rng)
                elif r < config.p_crossover + config.p_mutation:
                    child = mutate(parent(pop), config, rng)
                else:
                    child = parent(pop)
                offspring.append(admit(child))
            islands[isl] = offspring
        if callback:
            callback(gen, archive)

    if env is not env_full:
        rescored = ParetoFrontier()
        for e in archive.entries:
            rescored.update(ParetoEntry(-1, e.complexity, loss_of(e.expression, env_full, y_full), e.expression))
        archive = rescored
    return archive.with_ids()
