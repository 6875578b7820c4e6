"""Canonical formula rendering with a bounded simplification pass.

The goal is a deterministic string for metric comparison, not computer
algebra: constant subtrees fold, additive/multiplicative identities drop,
double negation/inversion cancels, and commutative operands are ordered by
their rendered text. Trees that are equal up to commutativity render to the
same string.
"""

from __future__ import annotations

import numpy as np

from .numeric import _FORWARD
from .tree import OpTree, TreeNode
from .vocab import Vocab, default_vocab, lookup

_ATOM = 4
_POW = 3
_MULDIV = 2
_ADDSUB = 1

_COMMUTATIVE = {"add", "mul"}


def _is_const(tree: OpTree, index: int, vocab: Vocab, value: float | None = None) -> bool:
    node = tree.nodes[index]
    if lookup(vocab, node.op_id).name != "C":
        return False
    return value is None or node.constants[0] == value


def simplify(tree: OpTree, vocab: Vocab | None = None) -> OpTree:
    """One bottom-up pass of folding and identity elimination (terminating)."""
    vocab = vocab or default_vocab()
    c_id = lookup(vocab, "C").token_id
    nodes: list[TreeNode] = []

    def emit(node: TreeNode) -> int:
        nodes.append(node)
        return len(nodes) - 1

    def is_c(index: int, value: float | None = None) -> bool:
        node = nodes[index]
        if node.op_id != c_id:
            return False
        return value is None or node.constants[0] == value

    def walk(old_index: int) -> int:
        node = tree.nodes[old_index]
        spec = lookup(vocab, node.op_id)
        children = [walk(c) for c in node.children]
        name = spec.name
        if spec.arity == 0:
            return emit(node)
        if all(is_c(c) for c in children):
            args = [np.float64(nodes[c].constants[0]) for c in children]
            with np.errstate(all="ignore"):
                folded = float(_FORWARD[name](node.constants, args))
            return emit(TreeNode(c_id, (), (folded,)))
        if name == "add":
            if is_c(children[0], 0.0):
                return children[1]
            if is_c(children[1], 0.0):
                return children[0]
        elif name == "sub":
            if is_c(children[1], 0.0):
                return children[0]
        elif name == "mul":
            if is_c(children[0], 1.0):
                return children[1]
            if is_c(children[1], 1.0):
                return children[0]
        elif name == "div":
            if is_c(children[1], 1.0):
                return children[0]
        elif name == "pow":
            if is_c(children[1], 0.0):
                return emit(TreeNode(c_id, (), (1.0,)))
            if is_c(children[1], 1.0):
                return children[0]
        elif name in ("neg", "inv"):
            child = nodes[children[0]]
            if child.op_id == node.op_id:
                return child.children[0]
        elif name == "L":
            if node.constants[0] == 1.0 and node.constants[1] == 0.0:
                return children[0]
        return emit(TreeNode(node.op_id, tuple(children), node.constants))

    root = walk(tree.root)
    reachable = _prune(nodes, root)
    return reachable


def _prune(nodes: list[TreeNode], root: int) -> OpTree:
    keep: list[int] = []
    seen = set()

    def visit(i: int):
        if i in seen:
            return
        seen.add(i)
        for c in nodes[i].children:
            visit(c)
        keep.append(i)

    visit(root)
    remap = {old: new for new, old in enumerate(keep)}
    new_nodes = tuple(
        TreeNode(nodes[i].op_id, tuple(remap[c] for c in nodes[i].children), nodes[i].constants)
        for i in keep
    )
    return OpTree(nodes=new_nodes, root=remap[root])


def has_variable(tree: OpTree, vocab: Vocab | None = None) -> bool:
    vocab = vocab or default_vocab()
    return any(lookup(vocab, n.op_id).name.startswith("x") for n in tree.nodes)


def format_constant(value: float, precision: int | None = 4) -> str:
    if precision is None:
        return repr(float(value))
    if value == 0.0:
        value = 0.0  # normalize -0.0
    return f"{value:.{precision}f}"


def render_formula(tree: OpTree, precision: int | None = 4, vocab: Vocab | None = None) -> str:
    """Canonical infix rendering of the simplified tree.

    ``precision=None`` renders constants losslessly (repr) for oracle checks.
    """
    vocab = vocab or default_vocab()
    simplified = simplify(tree, vocab)
    text, _ = _render(simplified, simplified.root, vocab, lambda v: format_constant(v, precision))
    return text


def render_skeleton(tree: OpTree, vocab: Vocab | None = None) -> str:
    """Unsimplified rendering with constants shown as c0, c1, ... (BFS slot order)."""
    vocab = vocab or default_vocab()
    counter = {"i": 0}

    def placeholder(_value: float) -> str:
        name = f"c{counter['i']}"
        counter["i"] += 1
        return name

    # Placeholder numbering must follow BFS slot order, so pre-assign labels.
    labels: dict[tuple[int, int], str] = {}
    for node_index in tree.bfs_order:
        for k in range(len(tree.nodes[node_index].constants)):
            labels[(node_index, k)] = placeholder(0.0)
    text, _ = _render(tree, tree.root, vocab, None, const_labels=labels)
    return text


def _render(
    tree: OpTree,
    index: int,
    vocab: Vocab,
    fmt,
    const_labels: dict[tuple[int, int], str] | None = None,
) -> tuple[str, int]:
    node = tree.nodes[index]
    spec = lookup(vocab, node.op_id)
    name = spec.name

    def const_text(slot: int) -> tuple[str, int]:
        if const_labels is not None:
            return const_labels[(index, slot)], _ATOM
        value = node.constants[slot]
        text = fmt(value)
        return text, _ADDSUB if text.startswith("-") else _ATOM

    def child(i: int) -> tuple[str, int]:
        return _render(tree, node.children[i], vocab, fmt, const_labels)

    def paren(pair: tuple[str, int], min_prec: int) -> str:
        text, prec = pair
        return f"({text})" if prec < min_prec else text

    if spec.arity == 0:
        if name == "C":
            return const_text(0)
        return name, _ATOM

    if name in _COMMUTATIVE:
        pairs = sorted((child(0), child(1)), key=lambda p: p[0])
        if name == "add":
            return f"{paren(pairs[0], _ADDSUB)} + {paren(pairs[1], _ADDSUB)}", _ADDSUB
        left = pairs[0][0] if pairs[0][1] >= _MULDIV or _is_neg_const(pairs[0]) else f"({pairs[0][0]})"
        return f"{left}*{paren(pairs[1], _MULDIV)}", _MULDIV
    if name == "sub":
        return f"{paren(child(0), _ADDSUB)} - {paren(child(1), _ADDSUB + 1)}", _ADDSUB
    if name == "div":
        return f"{paren(child(0), _MULDIV)}/{paren(child(1), _MULDIV + 1)}", _MULDIV
    if name == "pow":
        return f"{paren(child(0), _POW + 1)}**{paren(child(1), _POW)}", _POW
    if name == "neg":
        return f"-{paren(child(0), _MULDIV)}", _ADDSUB
    if name == "inv":
        return f"1/{paren(child(0), _MULDIV + 1)}", _MULDIV
    if name == "L":
        a, b = node.constants
        if const_labels is not None:
            a_text, b_text = const_text(0)[0], const_text(1)[0]
            tail = f" + {b_text}"
        else:
            a_text = fmt(a)
            b_text = fmt(abs(b))
            tail = f" - {b_text}" if b < 0 else f" + {b_text}"
        body = paren(child(0), _MULDIV)
        return f"{a_text}*{body}{tail}", _ADDSUB
    # remaining unary functions render as calls
    return f"{name}({child(0)[0]})", _ATOM


def _is_neg_const(pair: tuple[str, int]) -> bool:
    text, prec = pair
    return prec == _ADDSUB and text.startswith("-") and "(" not in text and " " not in text
