"""Constrained random generation of operation trees.

Generation is staged: grow a shape (arity-tagged placeholders), assign
operator symbols under adjacency/frequency constraints, then sample the
constants. All stages draw from counter-based Philox streams so a (seed,
stream) pair reproduces the same tree on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationExhausted, RationalityError
from .render import has_variable, simplify
from .tree import OpTree, TreeNode
from .vocab import Vocab, default_vocab, lookup


def rng_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent reproducible stream ``stream`` of master ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed), int(stream)))))


@dataclass(frozen=True)
class GenConfig:
    node_range: tuple[int, int] = (5, 15)
    n_vars: int = 1
    const_range: tuple[float, float] = (-2.0, 2.0)
    seed: int = 0
    max_rejections: int = 100
    max_consecutive_unary: int = 3
    # weights for opening a binary / unary / leaf node during shape growth
    arity_weights: tuple[float, float, float] = (0.4, 0.4, 0.2)
    vocab_overrides: dict | None = field(default=None, hash=False)

    def __post_init__(self):
        lo, hi = self.node_range
        if lo < 1 or hi < lo:
            raise ValueError(f"invalid node_range {self.node_range}")
        if self.n_vars not in (1, 2):
            raise ValueError("n_vars must be 1 or 2")
        if not self.const_range[0] < self.const_range[1]:
            raise ValueError("const_range must be a nonempty interval")


@dataclass(frozen=True)
class SkeletonNode:
    arity: int
    children: tuple[int, ...]


@dataclass(frozen=True)
class Skeleton:
    nodes: tuple[SkeletonNode, ...]
    root: int = 0

    @property
    def node_count(self) -> int:
        return len(self.nodes)


def sample_skeleton(cfg: GenConfig, rng: np.random.Generator) -> Skeleton:
    """Random shape with node count uniform over cfg.node_range.

    Growth keeps a frontier of open slots and assigns each a random arity,
    reweighted so the finished shape lands exactly on the drawn node count
    and no unary chain exceeds the global cap.
    """
    target = int(rng.integers(cfg.node_range[0], cfg.node_range[1] + 1))
    for _ in range(cfg.max_rejections):
        shape = _grow_shape(target, cfg, rng)
        if shape is not None:
            return shape
    raise GenerationExhausted(f"no {target}-node shape after {cfg.max_rejections} attempts")


def _grow_shape(target: int, cfg: GenConfig, rng: np.random.Generator) -> Skeleton | None:
    # Each open slot remembers the unary-chain length above it.
    arities: list[int | None] = [None]
    children: list[list[int]] = [[]]
    open_slots: list[tuple[int, int]] = [(0, 0)]  # (node index, unary chain above)
    placed = 0
    base = np.asarray(cfg.arity_weights, dtype=np.float64)[::-1]  # index by arity 0,1,2
    while open_slots:
        slot_pos = int(rng.integers(len(open_slots)))
        index, chain = open_slots.pop(slot_pos)
        remaining_others = len(open_slots)
        allowed = []
        for arity in (0, 1, 2):
            after = placed + 1
            frontier = remaining_others + arity
            if after + frontier > target:
                continue
            if frontier == 0 and after != target:
                continue
            if arity == 1 and chain + 1 > cfg.max_consecutive_unary:
                continue
            allowed.append(arity)
        if not allowed:
            return None
        weights = base[allowed]
        arity = int(rng.choice(allowed, p=weights / weights.sum()))
        arities[index] = arity
        placed += 1
        for _ in range(arity):
            child = len(arities)
            arities.append(None)
            children.append([])
            children[index].append(child)
            open_slots.append((child, chain + 1 if arity == 1 else 0))
    if placed != target:
        return None
    nodes = tuple(SkeletonNode(a, tuple(c)) for a, c in zip(arities, children))
    return Skeleton(nodes=nodes, root=0)


def _vocab_for(cfg: GenConfig) -> Vocab:
    from .vocab import build_vocab

    if cfg.vocab_overrides:
        return build_vocab(cfg.vocab_overrides)
    return default_vocab()


def assign_symbols(
    skeleton: Skeleton,
    cfg: GenConfig,
    rng: np.random.Generator,
    vocab: Vocab | None = None,
) -> OpTree:
    """Assign operators to a shape under adjacency and frequency constraints.

    Leaves draw from the variables and the constant placeholder, with at
    least one variable in the tree; the exponent child of pow is forced to
    the constant placeholder. Constants are zero-initialized.
    """
    vocab = vocab or _vocab_for(cfg)
    unary = vocab.by_arity(1)
    binary = vocab.by_arity(2)
    leaf_specs = list(vocab.variables(cfg.n_vars)) + [lookup(vocab, "C")]
    pow_spec = lookup(vocab, "pow")
    c_spec = lookup(vocab, "C")

    for _ in range(cfg.max_rejections):
        assignment = _try_assignment(
            skeleton, cfg, rng, unary, binary, leaf_specs, pow_spec, c_spec
        )
        if assignment is None:
            continue
        nodes = tuple(
            TreeNode(spec.token_id, skeleton.nodes[i].children, (0.0,) * spec.n_constants)
            for i, spec in enumerate(assignment)
        )
        return OpTree(nodes=nodes, root=skeleton.root)
    raise GenerationExhausted(
        f"no constraint-satisfying assignment after {cfg.max_rejections} attempts"
    )


def _try_assignment(skeleton, cfg, rng, unary, binary, leaf_specs, pow_spec, c_spec):
    n = skeleton.node_count
    assigned: list = [None] * n
    parent: list[int | None] = [None] * n
    forced_c = [False] * n
    counts: dict[str, int] = {}
    order = [skeleton.root]
    cursor = 0
    while cursor < len(order):  # BFS: parents assigned before children
        index = order[cursor]
        cursor += 1
        node = skeleton.nodes[index]
        for c in node.children:
            parent[c] = index
        order.extend(node.children)
        if forced_c[index]:
            assigned[index] = c_spec
            counts["C"] = counts.get("C", 0) + 1
            continue
        if node.arity == 0:
            pool = leaf_specs
        elif node.arity == 1:
            pool = unary
        else:
            pool = binary
        p = parent[index]
        p_spec = assigned[p] if p is not None else None
        options = []
        for spec in pool:
            if p_spec is not None:
                if spec.name in p_spec.forbidden_adjacent or p_spec.name in spec.forbidden_adjacent:
                    continue
            if spec.max_count is not None and counts.get(spec.name, 0) >= spec.max_count:
                continue
            if spec.arity == 1 and spec.max_consecutive is not None:
                run = 1
                q = p
                while q is not None and assigned[q] is not None and assigned[q].name == spec.name:
                    run += 1
                    q = parent[q]
                if run > spec.max_consecutive:
                    continue
            if spec.name == "pow":
                # exponent child must be a leaf so it can be forced to C
                right = skeleton.nodes[index].children[1]
                if skeleton.nodes[right].arity != 0:
                    continue
            options.append(spec)
        if not options:
            return None
        spec = options[int(rng.integers(len(options)))]
        assigned[index] = spec
        counts[spec.name] = counts.get(spec.name, 0) + 1
        if spec.name == "pow":
            forced_c[skeleton.nodes[index].children[1]] = True
    if not any(s.name.startswith("x") for s in assigned):
        return None
    return assigned


def sample_constants(tree: OpTree, cfg: GenConfig, rng: np.random.Generator,
                     vocab: Vocab | None = None) -> np.ndarray:
    """Uniform constants over cfg.const_range, in BFS slot order.

    The multiplicative slot of the affine wrapper L is resampled until its
    magnitude is at least 0.05 so it cannot silently erase its subtree.
    """
    vocab = vocab or _vocab_for(cfg)
    lo, hi = cfg.const_range
    values: list[float] = []
    for index in tree.bfs_order:
        node = tree.nodes[index]
        spec = lookup(vocab, node.op_id)
        for slot in range(spec.n_constants):
            v = float(rng.uniform(lo, hi))
            if spec.name == "L" and slot == 0:
                while abs(v) < 0.05:
                    v = float(rng.uniform(lo, hi))
            values.append(v)
    return np.asarray(values, dtype=np.float64)


def generate_tree(cfg: GenConfig, rng: np.random.Generator, vocab: Vocab | None = None) -> OpTree:
    """Shape + symbols + constants, without the rationality screen."""
    vocab = vocab or _vocab_for(cfg)
    skeleton = sample_skeleton(cfg, rng)
    tree = assign_symbols(skeleton, cfg, rng, vocab)
    return tree.with_constants(sample_constants(tree, cfg, rng, vocab))


def generate_valid_tree(
    cfg: GenConfig,
    rng: np.random.Generator,
    render_cfg=None,
    vocab: Vocab | None = None,
) -> OpTree:
    """A tree that is not symbolically constant and renders a valid image.

    ``render_cfg`` defaults to the standard three-scale RenderConfig with the
    config's variable count.
    """
    from .funcimg import RenderConfig, render

    vocab = vocab or _vocab_for(cfg)
    if render_cfg is None:
        render_cfg = RenderConfig(n_vars=cfg.n_vars)
    for _ in range(cfg.max_rejections):
        tree = generate_tree(cfg, rng, vocab)
        if not has_variable(simplify(tree, vocab), vocab):
            continue
        try:
            render(tree, render_cfg, vocab=vocab)
        except RationalityError:
            continue
        return tree
    raise GenerationExhausted(
        f"no rational tree after {cfg.max_rejections} attempts"
    )
