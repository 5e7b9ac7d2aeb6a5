import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ductsr.expr import (
    VARIABLES,
    BinOp,
    Const,
    ExprFeatures,
    ExprSyntaxError,
    UnaryOp,
    UnknownIdentifierError,
    Var,
    complexity,
    constants,
    evaluate,
    evaluate_batch,
    extract_features,
    parse,
    to_string,
    violates_nesting,
    with_constants,
)

DATA = Path(__file__).parent / "data"
REFERENCE = json.loads((DATA / "reference.json").read_text())
VELOCITY_TEXT = "Re*(2.18-8.46*Y**2)*(1-3.89*Z**2)"


def velocity_tree():
    y_part = BinOp("-", Const(2.18), BinOp("*", Const(8.46), UnaryOp("square", Var("Y"))))
    z_part = BinOp("-", Const(1.0), BinOp("*", Const(3.89), UnaryOp("square", Var("Z"))))
    return BinOp("*", BinOp("*", Var("Re"), y_part), z_part)


# -- strategies -------------------------------------------------------------

finite_floats = st.floats(allow_nan=False, allow_infinity=False, width=64)
leaves = st.one_of(st.sampled_from(VARIABLES).map(Var), finite_floats.map(Const))


def _extend(inner):
    unary = inner.filter(lambda t: not isinstance(t, UnaryOp)).flatmap(
        lambda c: st.sampled_from(["square", "cube"]).map(lambda op: UnaryOp(op, c))
    )
    binary = st.tuples(st.sampled_from(["+", "-", "*", "/"]), inner, inner).map(
        lambda t: BinOp(*t)
    )
    return st.one_of(unary, binary)


trees = st.recursive(leaves, _extend, max_leaves=12)


# -- complexity -------------------------------------------------------------


@pytest.mark.parametrize(
    "text, expected",
    [("X", 1), ("X**3", 2), ("Re-427.88*Y**2", 6), ("0.91*Re", 3), ("Re-849.34*Y**2+76.16", 8)],
)
def test_complexity_matches_reference_rows(text, expected):
    assert complexity(parse(text)) == expected


def test_complexity_of_printed_ids_7_and_9():
    # Table 3 lists 13 and 17; node counting the printed strings gives 15
    assert complexity(parse(REFERENCE[7]["expression"])) == 15
    assert complexity(parse(REFERENCE[9]["expression"])) == 15


@settings(max_examples=300, deadline=None)
@given(trees)
def test_complexity_recursion(e):
    c = complexity(e)
    assert c >= 1
    if isinstance(e, BinOp):
        assert c == 1 + complexity(e.left) + complexity(e.right)
    elif isinstance(e, UnaryOp):
        assert c == 1 + complexity(e.child)
    else:
        assert c == 1


# -- evaluation -------------------------------------------------------------


def test_evaluate_constant():
    assert evaluate(Const(2.5), {"X": 1.0, "Y": -3.0, "Z": 0.0, "Re": 7.0}) == 2.5


def test_evaluate_velocity_at_center():
    point = {"X": 0.0, "Y": 0.0, "Z": 0.0, "Re": 100.0}
    assert evaluate(parse(VELOCITY_TEXT), point) == pytest.approx(218.0, rel=1e-15)


def test_evaluate_division_by_zero_is_flagged():
    out = evaluate(parse("X / Y"), {"X": 1.0, "Y": 0.0, "Z": 0.0, "Re": 1.0})
    assert not math.isfinite(out)


def test_evaluate_batch_matches_pointwise():
    rng = np.random.default_rng(3)
    cols = {v: rng.uniform(-1, 1, 50) for v in VARIABLES}
    e = parse("(X+Y**3)/(Re-Z**2)*2.5")
    batch = evaluate_batch(e, cols)
    for i in range(50):
        assert batch[i] == evaluate(e, {v: cols[v][i] for v in VARIABLES})


def test_evaluate_batch_constant_broadcasts():
    cols = {v: np.zeros(7) for v in VARIABLES}
    assert np.array_equal(evaluate_batch(Const(5.0), cols), np.full(7, 5.0))


@settings(max_examples=200, deadline=None)
@given(trees, st.tuples(finite_floats, finite_floats, finite_floats, finite_floats))
def test_evaluate_is_deterministic(e, pt):
    point = dict(zip(VARIABLES, pt))
    a, b = evaluate(e, point), evaluate(e, point)
    assert (a == b) or (math.isnan(a) and math.isnan(b))


# -- parse / print ----------------------------------------------------------


def test_parse_velocity():
    assert parse(VELOCITY_TEXT) == velocity_tree()


def test_parse_variable_case_insensitive():
    assert parse("X") == Var("X")
    assert parse("re*x") == BinOp("*", Var("Re"), Var("X"))


def test_parse_precedence_and_associativity():
    assert parse("1-2-3") == BinOp("-", BinOp("-", Const(1), Const(2)), Const(3))
    assert parse("1+2*3") == BinOp("+", Const(1), BinOp("*", Const(2), Const(3)))
    assert parse("2*Y**2") == BinOp("*", Const(2), UnaryOp("square", Var("Y")))
    assert parse("X/Y/Z") == BinOp("/", BinOp("/", Var("X"), Var("Y")), Var("Z"))


def test_parse_fourth_power_is_nested_square():
    e = parse("X**4")
    assert e == UnaryOp("square", UnaryOp("square", Var("X")))
    assert violates_nesting(e)


def test_parse_unary_minus():
    assert parse("-3.5") == Const(-3.5)
    assert parse("(-2)**2") == UnaryOp("square", Const(-2.0))
    assert parse("-X") == BinOp("*", Const(-1.0), Var("X"))


@pytest.mark.parametrize(
    "text, pos",
    [("X +", 3), ("(X", 2), ("X ** 5", 5), ("2 3", 2), ("X $ Y", 2), ("", 0), ("X*)", 2)],
)
def test_parse_syntax_errors_report_position(text, pos):
    with pytest.raises(ExprSyntaxError) as info:
        parse(text)
    assert info.value.position == pos


def test_parse_unknown_identifier():
    with pytest.raises(UnknownIdentifierError) as info:
        parse("X + W")
    assert info.value.position == 4


def test_parse_rejects_implicit_multiplication():
    with pytest.raises(ExprSyntaxError):
        parse("2X")
    with pytest.raises(ExprSyntaxError):
        parse("(X)(Y)")


def test_print_simple():
    assert to_string(Var("X")) == "X"
    assert to_string(UnaryOp("square", Var("Y"))) == "Y**2"
    assert to_string(velocity_tree()) == "Re*(2.18-8.46*Y**2)*(1-3.89*Z**2)"


@pytest.mark.parametrize("row", REFERENCE, ids=lambda r: f"id{r['id']}")
def test_reference_round_trip(row):
    tree = parse(row["expression"])
    assert parse(to_string(tree)) == tree


def test_print_keeps_right_operand_grouping():
    e = BinOp("-", Var("X"), BinOp("-", Var("Y"), Var("Z")))
    assert to_string(e) == "X-(Y-Z)"
    assert parse(to_string(e)) == e


def test_print_negative_and_tiny_constants():
    for v in (-1.5, 1e-300, -2.5e17, 0.1 + 0.2, -0.0):
        e = BinOp("*", Const(v), UnaryOp("cube", Const(v)))
        back = parse(to_string(e))
        assert back == e
        assert math.copysign(1, back.left.value) == math.copysign(1, v)


@settings(max_examples=1000, deadline=None)
@given(trees)
def test_round_trip_random_trees(e):
    assert parse(to_string(e)) == e


# -- constants helpers ------------------------------------------------------


def test_with_constants_preorder():
    e = parse("1+X*(2-3)")
    assert constants(e) == [1.0, 2.0, 3.0]
    assert to_string(with_constants(e, [4, 5, 6])) == "4+X*(5-6)"
    with pytest.raises(ValueError):
        with_constants(e, [1, 2, 3, 4])


def test_non_finite_constant_rejected():
    with pytest.raises(ValueError):
        Const(math.inf)


# -- features ---------------------------------------------------------------


def test_features_reference_id7():
    f = extract_features(parse(REFERENCE[7]["expression"]))
    assert f.contains_re and f.has_y2 and f.has_z2
    assert not (f.has_x3 or f.has_y3 or f.has_x4)


def test_features_constant_all_false():
    assert extract_features(Const(1.0)) == ExprFeatures()


def test_features_direct_reading():
    f = extract_features(parse("X**3 + Y"))
    assert f.has_x3 and f.contains_y and not f.has_y2


def test_features_are_syntactic():
    assert not extract_features(parse("Y*Y")).has_y2


def test_features_fourth_power():
    f = extract_features(parse("Z**4"))
    assert f.has_z4 and f.has_z2 and f.nested and f.contains_z


def _tracked_tree(rng, depth):
    """Random tree plus the set of patterns built into it, recorded as they are made."""
    r = rng.random()
    if depth == 0 or r < 0.3:
        k = int(rng.integers(5))
        if k == 4:
            return Const(float(rng.normal())), set()
        name = VARIABLES[k]
        return Var(name), {name.lower()}
    if r < 0.55:
        op = ["square", "cube"][int(rng.integers(2))]
        if rng.random() < 0.5:
            name = VARIABLES[int(rng.integers(4))]
            found = {name.lower()}
            if name != "Re":
                found.add(f"{name.lower()}{2 if op == 'square' else 3}")
            if op == "square" and rng.random() < 0.4:
                node = UnaryOp("square", UnaryOp("square", Var(name)))
                found.add("nested")
                if name != "Re":
                    found.add(f"{name.lower()}4")
                return node, found
            return UnaryOp(op, Var(name)), found
        child, found = _tracked_tree(rng, depth - 1)
        while isinstance(child, (UnaryOp, Var)):
            child, found = _tracked_tree(rng, depth - 1)
            if isinstance(child, Const):
                break
        return UnaryOp(op, child), found
    left, fl = _tracked_tree(rng, depth - 1)
    right, fr = _tracked_tree(rng, depth - 1)
    return BinOp(["+", "-", "*", "/"][int(rng.integers(4))], left, right), fl | fr


def test_feature_soundness_against_tracked_inventory():
    rng = np.random.default_rng(11)
    for _ in range(2000):
        tree, inventory = _tracked_tree(rng, 5)
        assert extract_features(tree).names() == inventory, to_string(tree)


@settings(max_examples=300, deadline=None)
@given(trees)
def test_feature_implications(e):
    f = extract_features(e)
    for v in "xyz":
        for k in (2, 3, 4):
            if getattr(f, f"has_{v}{k}"):
                assert getattr(f, f"contains_{v}")
