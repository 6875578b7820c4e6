import math

import numpy as np
import pytest

from otsforge.numeric import evaluate
from otsforge.render import format_constant, has_variable, render_formula, render_skeleton, simplify
from otsforge.tree import build_tree, encode_bfs
from otsforge.treegen import GenConfig, generate_tree, rng_stream

EVAL_NAMESPACE = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
    "log": np.log, "sqrt": np.sqrt, "abs": np.abs,
    "nan": np.nan, "inf": np.inf,
}


def test_additive_identity_elimination(vocab):
    tree = build_tree(vocab, ("add", ("C", [0.0]), "x0"))
    assert render_formula(tree, vocab=vocab) == "x0"


def test_commutative_canonical_order(vocab):
    a = build_tree(vocab, ("mul", "x1", "x0"))
    b = build_tree(vocab, ("mul", "x0", "x1"))
    assert render_formula(a) == render_formula(b) == "x0*x1"


def test_affine_rendering_matches_fixed_precision(vocab):
    tree = build_tree(vocab, ("L", [-1.15, -1.13], ("div", "x0", "x1")))
    assert render_formula(tree, precision=4) == "-1.1500*x0/x1 - 1.1300"


def test_more_identities(vocab):
    assert render_formula(build_tree(vocab, ("sub", "x0", ("C", [0.0])))) == "x0"
    assert render_formula(build_tree(vocab, ("div", "x0", ("C", [1.0])))) == "x0"
    assert render_formula(build_tree(vocab, ("mul", ("C", [1.0]), "x0"))) == "x0"
    assert render_formula(build_tree(vocab, ("pow", "x0", ("C", [1.0])))) == "x0"
    assert render_formula(build_tree(vocab, ("pow", "x0", ("C", [0.0])))) == "1.0000"
    assert render_formula(build_tree(vocab, ("neg", ("neg", "x0")))) == "x0"
    assert render_formula(build_tree(vocab, ("inv", ("inv", "x0")))) == "x0"
    assert render_formula(build_tree(vocab, ("L", [1.0, 0.0], "x0"))) == "x0"


def test_constant_folding(vocab):
    tree = build_tree(vocab, ("add", ("C", [2.0]), ("mul", ("C", [3.0]), ("C", [4.0]))))
    assert render_formula(tree) == "14.0000"
    deep = build_tree(vocab, ("cos", ("C", [0.0])))
    assert render_formula(deep) == "1.0000"


def test_surjectivity_pair_render_equal_ots_differ(vocab):
    a = build_tree(vocab, ("add", "x0", ("C", [0.5])))
    b = build_tree(vocab, ("add", ("C", [0.5]), "x0"))
    assert render_formula(a) == render_formula(b)
    assert encode_bfs(a, vocab)[0] != encode_bfs(b, vocab)[0]


def test_identical_trees_render_identically(vocab):
    spec = ("sub", ("mul", "x0", ("C", [1.25])), ("sin", "x1"))
    assert render_formula(build_tree(vocab, spec)) == render_formula(build_tree(vocab, spec))


def test_constant_formatting():
    assert format_constant(2.4242) == "2.4242"
    assert format_constant(-1.15) == "-1.1500"
    assert format_constant(-0.0) == "0.0000"
    assert format_constant(0.5, precision=None) == "0.5"


def test_has_variable(vocab):
    assert has_variable(build_tree(vocab, ("sin", "x0")), vocab)
    assert not has_variable(build_tree(vocab, ("C", [3.0])), vocab)
    folded = simplify(build_tree(vocab, ("mul", ("C", [2.0]), ("C", [3.0]))), vocab)
    assert not has_variable(folded, vocab)


def test_render_skeleton_placeholders(vocab):
    tree = build_tree(vocab, ("L", [0.0, 0.0], ("add", ("C", [0.0]), "x0")))
    assert render_skeleton(tree, vocab) == "c0*(c2 + x0) + c1"


def test_rendered_string_evaluates_like_the_tree(vocab):
    # lossless precision; constants on a 1/16 grid so text form is exact
    rng = rng_stream(777, 0)
    checked = 0
    for i in range(40):
        cfg = GenConfig(node_range=(5, 12), n_vars=2, seed=777 + i)
        tree = generate_tree(cfg, rng_stream(777, i + 1), vocab)
        consts = tree.constants_array()
        if consts.size:
            consts = np.round(consts * 16) / 16
            tree = tree.with_constants(consts)
        text = render_formula(tree, precision=None, vocab=vocab)
        points = rng.uniform(-3, 3, (17, 2))
        expected = evaluate(tree, points, vocab)
        namespace = dict(EVAL_NAMESPACE)
        namespace["x0"] = points[:, 0]
        namespace["x1"] = points[:, 1]
        with np.errstate(all="ignore"):
            got = np.broadcast_to(np.asarray(eval(text, {"__builtins__": {}}, namespace),
                                             dtype=np.float64), expected.shape)
        finite = np.isfinite(expected) & np.isfinite(got)
        if finite.any():
            np.testing.assert_allclose(got[finite], expected[finite], atol=1e-9, rtol=1e-9)
            checked += 1
    assert checked >= 25


def test_simplify_terminates_and_preserves_semantics(vocab):
    tree = build_tree(
        vocab,
        ("add", ("mul", ("C", [1.0]), ("neg", ("neg", "x0"))), ("C", [0.0])),
    )
    simple = simplify(tree, vocab)
    points = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_allclose(evaluate(simple, points), evaluate(tree, points))
    assert render_formula(tree) == "x0"
