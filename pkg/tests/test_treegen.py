import numpy as np
import pytest

from otsforge.errors import RationalityError
from otsforge.funcimg import RenderConfig, render
from otsforge.render import has_variable, simplify
from otsforge.tree import encode_bfs, is_reconstructable
from otsforge.treegen import (
    GenConfig,
    assign_symbols,
    generate_tree,
    generate_valid_tree,
    rng_stream,
    sample_constants,
    sample_skeleton,
)
from otsforge.vocab import lookup


def shape_signature(skeleton):
    return tuple(node.arity for node in skeleton.nodes)


def test_single_node_range_gives_the_leaf(vocab):
    cfg = GenConfig(node_range=(1, 1), seed=1)
    skeleton = sample_skeleton(cfg, rng_stream(1, 0))
    assert skeleton.node_count == 1
    assert skeleton.nodes[skeleton.root].arity == 0


def test_three_node_shapes_enumerated(vocab):
    # only two 3-node shapes exist: binary root with two leaves, or a
    # unary chain of length two onto a leaf
    seen = set()
    cfg = GenConfig(node_range=(3, 3), seed=2)
    for i in range(60):
        skeleton = sample_skeleton(cfg, rng_stream(2, i))
        root = skeleton.nodes[skeleton.root]
        if root.arity == 2:
            seen.add("binary")
            assert all(skeleton.nodes[c].arity == 0 for c in root.children)
        else:
            seen.add("unary-chain")
            child = skeleton.nodes[root.children[0]]
            assert child.arity == 1
            assert skeleton.nodes[child.children[0]].arity == 0
    assert seen == {"binary", "unary-chain"}


def test_max_consecutive_one_forces_binary_shape(vocab):
    cfg = GenConfig(node_range=(3, 3), seed=3, max_consecutive_unary=1)
    for i in range(30):
        skeleton = sample_skeleton(cfg, rng_stream(3, i))
        assert skeleton.nodes[skeleton.root].arity == 2


def test_skeleton_determinism(vocab):
    cfg = GenConfig(node_range=(5, 15), seed=9)
    a = sample_skeleton(cfg, rng_stream(9, 4))
    b = sample_skeleton(cfg, rng_stream(9, 4))
    assert shape_signature(a) == shape_signature(b)


def test_node_count_fidelity(vocab):
    cfg = GenConfig(node_range=(5, 15), seed=10)
    for i in range(100):
        skeleton = sample_skeleton(cfg, rng_stream(10, i))
        assert 5 <= skeleton.node_count <= 15


def test_single_leaf_assignment_forces_variable(vocab):
    cfg = GenConfig(node_range=(1, 1), n_vars=1, seed=4)
    for i in range(20):
        skeleton = sample_skeleton(cfg, rng_stream(4, i))
        tree = assign_symbols(skeleton, cfg, rng_stream(5, i), vocab)
        assert lookup(vocab, tree.nodes[tree.root].op_id).name == "x0"


def test_constraint_soundness_scan(vocab):
    cfg = GenConfig(node_range=(5, 15), n_vars=2, seed=6)
    for i in range(400):
        tree = generate_tree(cfg, rng_stream(6, i), vocab)
        _assert_constraints(tree, vocab)
        ots, _ = encode_bfs(tree, vocab)
        assert is_reconstructable(ots, vocab)


def _assert_constraints(tree, vocab):
    counts = {}
    for index, node in enumerate(tree.nodes):
        spec = lookup(vocab, node.op_id)
        counts[spec.name] = counts.get(spec.name, 0) + 1
        for child_index in node.children:
            child = lookup(vocab, tree.nodes[child_index].op_id)
            assert child.name not in spec.forbidden_adjacent, f"{spec.name}->{child.name}"
            assert spec.name not in child.forbidden_adjacent, f"{spec.name}->{child.name}"
        if spec.name == "pow":
            exponent = lookup(vocab, tree.nodes[node.children[1]].op_id)
            assert exponent.name == "C"
    for name, count in counts.items():
        spec = lookup(vocab, name)
        if spec.max_count is not None:
            assert count <= spec.max_count, f"{name} appears {count} times"
    # no unary chain longer than 3 anywhere
    def chain_below(index, length):
        node = tree.nodes[index]
        spec = lookup(vocab, node.op_id)
        if spec.arity == 1:
            length += 1
            assert length <= 3
        else:
            length = 0
        for child in node.children:
            chain_below(child, length)

    chain_below(tree.root, 0)


def test_constants_empty_for_zero_slot_tree(vocab):
    cfg = GenConfig(seed=7)
    skeleton = sample_skeleton(GenConfig(node_range=(3, 3), seed=7), rng_stream(7, 0))
    tree = assign_symbols(skeleton, cfg, rng_stream(7, 1), vocab)
    consts = sample_constants(tree, cfg, rng_stream(7, 2), vocab)
    expected = sum(lookup(vocab, n.op_id).n_constants for n in tree.nodes)
    assert consts.size == expected


def test_constant_distribution(vocab):
    cfg = GenConfig(seed=8, const_range=(-2.0, 2.0))
    from otsforge.tree import build_tree

    tree = build_tree(vocab, ("C", [0.0]))
    rng = rng_stream(8, 0)
    draws = np.concatenate([sample_constants(tree, cfg, rng, vocab) for _ in range(10_000)])
    assert draws.min() >= -2.0
    assert draws.max() <= 2.0
    assert abs(draws.mean()) < 0.05


def test_affine_scale_degeneracy_guard(vocab):
    from otsforge.tree import build_tree

    cfg = GenConfig(seed=12)
    tree = build_tree(vocab, ("L", [0.0, 0.0], "x0"))
    rng = rng_stream(12, 0)
    for _ in range(2000):
        a, _b = sample_constants(tree, cfg, rng, vocab)
        assert abs(a) >= 0.05


def test_sample_constants_determinism(vocab):
    from otsforge.tree import build_tree

    cfg = GenConfig(seed=13)
    tree = build_tree(vocab, ("L", [0.0, 0.0], ("add", ("C", [0.0]), "x0")))
    a = sample_constants(tree, cfg, rng_stream(13, 5), vocab)
    b = sample_constants(tree, cfg, rng_stream(13, 5), vocab)
    np.testing.assert_array_equal(a, b)


def test_generated_tree_stream_determinism(vocab):
    cfg = GenConfig(node_range=(5, 15), n_vars=2, seed=14)
    a = [encode_bfs(generate_tree(cfg, rng_stream(14, i), vocab), vocab) for i in range(10)]
    b = [encode_bfs(generate_tree(cfg, rng_stream(14, i), vocab), vocab) for i in range(10)]
    for (ots_a, c_a), (ots_b, c_b) in zip(a, b):
        assert ots_a == ots_b
        np.testing.assert_array_equal(c_a, c_b)


def test_nested_log_rejected_for_insufficient_domain(vocab):
    from otsforge.tree import build_tree

    tree = build_tree(vocab, ("log", ("log", "x0")))
    # finite only for x0 > 1: under half of every default scale
    with pytest.raises(RationalityError) as err:
        render(tree, RenderConfig(n_vars=1), vocab=vocab)
    assert err.value.reason == "insufficient_domain"


def test_generate_valid_tree_postconditions(vocab):
    cfg = GenConfig(node_range=(5, 9), n_vars=1, seed=15)
    render_cfg = RenderConfig(n_vars=1, resolution=32)
    for i in range(25):
        tree = generate_valid_tree(cfg, rng_stream(15, i), render_cfg, vocab)
        assert has_variable(simplify(tree, vocab), vocab)
        img = render(tree, render_cfg, vocab=vocab)  # must not raise
        assert np.isfinite(img.data).all()
