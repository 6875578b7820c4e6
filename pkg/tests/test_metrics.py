from functools import lru_cache

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otsforge.errors import DegenerateTarget
from otsforge.metrics import EvalPair, EvalSet, acc_r, formula_s_rl, levenshtein, s_rl
from otsforge.tree import build_tree, encode_bfs


def oracle_levenshtein(a, b):
    """Textbook recursive formulation, memoized; independent of the
    iterative two-row implementation under test."""
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def dist(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        cost = 0 if a[i - 1] == b[j - 1] else 1
        return min(dist(i - 1, j) + 1, dist(i, j - 1) + 1, dist(i - 1, j - 1) + cost)

    return dist(len(a), len(b))


def test_levenshtein_identity():
    assert levenshtein([1, 2, 3], [1, 2, 3]) == 0


def test_levenshtein_classic_strings():
    assert levenshtein("kitten", "sitting") == 3
    assert oracle_levenshtein("kitten", "sitting") == 3


def test_levenshtein_deletions_only():
    assert levenshtein([1, 2, 3], []) == 3


@settings(max_examples=200, deadline=None)
@given(
    a=st.lists(st.integers(0, 5), max_size=12),
    b=st.lists(st.integers(0, 5), max_size=12),
    c=st.lists(st.integers(0, 5), max_size=12),
)
def test_levenshtein_metric_properties(a, b, c):
    d_ab = levenshtein(a, b)
    assert d_ab == oracle_levenshtein(a, b)
    assert d_ab == levenshtein(b, a)
    assert (d_ab == 0) == (a == b)
    assert d_ab <= levenshtein(a, c) + levenshtein(c, b)


def _pair(vocab, pred_spec, target_spec):
    pred_ots, pred_consts = encode_bfs(build_tree(vocab, pred_spec), vocab)
    t_ots, t_consts = encode_bfs(build_tree(vocab, target_spec), vocab)
    return EvalPair(
        prediction=pred_ots,
        target=t_ots,
        target_constants=tuple(t_consts),
        prediction_constants=tuple(pred_consts),
    )


def test_acc_r_examples(vocab):
    good = _pair(vocab, ("sin", "x0"), ("sin", "x0"))
    bad = EvalPair(prediction=(4, 17), target=good.target, target_constants=good.target_constants)
    assert acc_r(EvalSet((good, good)), vocab) == 1.0
    assert acc_r(EvalSet((good, bad)), vocab) == 0.5
    empty = EvalPair(prediction=(), target=good.target, target_constants=good.target_constants)
    assert acc_r(EvalSet((empty,)), vocab) == 0.0


def test_s_rl_identity(vocab):
    pair = _pair(vocab, ("mul", "x0", "x1"), ("mul", "x0", "x1"))
    assert s_rl(EvalSet((pair,))) == 1.0


def test_s_rl_direct_formula(vocab):
    # stripped target length 4, one substitution
    pair = EvalPair(prediction=(1, 17, 17, 18), target=(1, 17, 17, 17), target_constants=())
    assert s_rl(EvalSet((pair,))) == pytest.approx(0.75)


def test_s_rl_padding_stripped_but_internal_fillers_kept(vocab):
    target = (8, 17, 0, 0, 0)  # sin(x0) with trailing filler level
    pred = (8, 17, 0)
    pair = EvalPair(prediction=pred, target=target, target_constants=())
    # stripped both sides -> [8, 17] vs [8, 17]
    assert s_rl(EvalSet((pair,))) == 1.0


def test_s_rl_can_go_negative(vocab):
    target = (8, 17)
    pred = (8, 17, 9, 9, 9)  # three extra tokens beyond a 2-token target
    pair = EvalPair(prediction=pred, target=target, target_constants=())
    assert s_rl(EvalSet((pair,))) == pytest.approx((2 - 3) / 2)


def test_s_rl_degenerate_target(vocab):
    pair = EvalPair(prediction=(8, 17), target=(0, 0, 0), target_constants=())
    with pytest.raises(DegenerateTarget):
        s_rl(EvalSet((pair,)))


def test_formula_s_rl_identity(vocab):
    pair = _pair(
        vocab,
        ("L", [1.5, -0.5], ("sin", "x0")),
        ("L", [1.5, -0.5], ("sin", "x0")),
    )
    assert formula_s_rl(EvalSet((pair,)), vocab) == 1.0


def test_formula_s_rl_unreconstructable_contributes_zero(vocab):
    target_ots, target_consts = encode_bfs(build_tree(vocab, ("sin", "x0")), vocab)
    bad = EvalPair(prediction=(4, 17), target=target_ots, target_constants=tuple(target_consts))
    assert formula_s_rl(EvalSet((bad,)), vocab) == 0.0


def test_formula_s_rl_commutative_variants_collapse(vocab):
    pair = _pair(vocab, ("add", "x0", ("C", [0.5])), ("add", ("C", [0.5]), "x0"))
    assert pair.prediction != pair.target
    assert formula_s_rl(EvalSet((pair,)), vocab) == 1.0


def test_formula_s_rl_zero_fills_missing_prediction_constants(vocab):
    target_ots, target_consts = encode_bfs(
        build_tree(vocab, ("mul", "x0", ("C", [0.0]))), vocab
    )
    pair = EvalPair(
        prediction=target_ots,
        target=target_ots,
        target_constants=tuple(target_consts),
        prediction_constants=None,
    )
    # zero-filled prediction constants match the zero target constant
    assert formula_s_rl(EvalSet((pair,)), vocab) == 1.0


def test_eval_set_requires_pairs():
    with pytest.raises(ValueError):
        EvalSet(())
