"""Operation trees and the breadth-first sequence codec.

An operation tree serializes to an integer token sequence (OTS) level by
level. Every real node opens exactly two slots in the next level: a binary
node fills them with [left, right], a unary node with [child, end], a leaf
with [end, end]; 'end' slots (token 0) open nothing. The encoding covers all
levels containing a real node plus the trailing all-'end' level, except for a
single-leaf tree which encodes as just its own token. Constants are collected
separately, in BFS node order, so the token sequence is constant-free.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ReconstructionError
from .vocab import Vocab, lookup

OTS = tuple[int, ...]


@dataclass(frozen=True)
class TreeNode:
    op_id: int
    children: tuple[int, ...] = ()
    constants: tuple[float, ...] = ()


@dataclass(frozen=True)
class OpTree:
    """A rooted operation tree. Immutable; all operations on it are pure."""

    nodes: tuple[TreeNode, ...]
    root: int = 0

    @cached_property
    def bfs_order(self) -> tuple[int, ...]:
        order = [self.root]
        cursor = 0
        while cursor < len(order):
            order.extend(self.nodes[order[cursor]].children)
            cursor += 1
        return tuple(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, index: int) -> TreeNode:
        return self.nodes[index]

    def constants_array(self) -> np.ndarray:
        """All constants concatenated in BFS node order."""
        values = []
        for i in self.bfs_order:
            values.extend(self.nodes[i].constants)
        return np.asarray(values, dtype=np.float64)

    def with_constants(self, values) -> "OpTree":
        """A copy with constant slots refilled from ``values`` in BFS node order."""
        values = [float(v) for v in np.asarray(values).ravel()]
        n_slots = sum(len(self.nodes[i].constants) for i in self.bfs_order)
        if len(values) != n_slots:
            raise ValueError(f"expected {n_slots} constants, got {len(values)}")
        new_nodes = list(self.nodes)
        cursor = 0
        for i in self.bfs_order:
            node = self.nodes[i]
            k = len(node.constants)
            if k:
                new_nodes[i] = TreeNode(node.op_id, node.children, tuple(values[cursor:cursor + k]))
                cursor += k
        return OpTree(nodes=tuple(new_nodes), root=self.root)

    def structurally_equal(self, other: "OpTree") -> bool:
        """Same shape, symbols and constants (order of node storage ignored)."""
        return _canonical(self) == _canonical(other)


def _canonical(tree: OpTree):
    index_of = {n: i for i, n in enumerate(tree.bfs_order)}
    out = []
    for i in tree.bfs_order:
        node = tree.nodes[i]
        out.append((node.op_id, tuple(index_of[c] for c in node.children), node.constants))
    return tuple(out)


def build_tree(vocab: Vocab, spec) -> OpTree:
    """Build a tree from nested tuples, mostly for tests and the CLI.

    ``spec`` is ``name`` for a constant-free leaf, or a tuple
    ``(name, child_spec, ...)``; operators with constant slots take the
    constants as a list in the position right after the name, e.g.
    ``("L", [2.0, -1.0], ("sin", "x0"))`` or ``("C", [2.4242])``.
    """
    nodes: list[TreeNode] = []

    def walk(s) -> int:
        if isinstance(s, str):
            s = (s,)
        name = s[0]
        rest = list(s[1:])
        consts: tuple[float, ...] = ()
        if rest and isinstance(rest[0], (list, np.ndarray)):
            consts = tuple(float(v) for v in rest.pop(0))
        op = lookup(vocab, name)
        if len(rest) != op.arity:
            raise ValueError(f"{name} takes {op.arity} children, got {len(rest)}")
        if len(consts) != op.n_constants:
            if consts or op.n_constants:
                raise ValueError(f"{name} takes {op.n_constants} constants, got {len(consts)}")
        children = tuple(walk(c) for c in rest)
        nodes.append(TreeNode(op.token_id, children, consts))
        return len(nodes) - 1

    root = walk(spec)
    return OpTree(nodes=tuple(nodes), root=root)


def encode_bfs(tree: OpTree, vocab: Vocab) -> tuple[OTS, np.ndarray]:
    """Serialize a tree to (token sequence, constants in BFS node order)."""
    tokens: list[int] = []
    level: list[int | None] = [tree.root]  # node index per slot, None for a forced end
    multi_node = len(tree.nodes) > 1
    while True:
        has_real = any(s is not None for s in level)
        if not has_real:
            if multi_node:
                tokens.extend(0 for _ in level)
            break
        next_level: list[int | None] = []
        for slot in level:
            if slot is None:
                tokens.append(0)
                continue
            node = tree.nodes[slot]
            tokens.append(node.op_id)
            arity = len(node.children)
            if arity == 2:
                next_level.extend(node.children)
            elif arity == 1:
                next_level.extend((node.children[0], None))
            else:
                next_level.extend((None, None))
        level = next_level
    consts = tree.constants_array()
    return tuple(tokens), consts


def decode_bfs(ots, consts, vocab: Vocab) -> OpTree:
    """Rebuild a tree from a token sequence and its constants vector.

    Total on arbitrary input: returns a valid tree or raises
    ReconstructionError. Trailing 'end' tokens may be truncated or padded
    arbitrarily; everything before the trailing run must fill the slot grid
    exactly (a binary slot needs an operator, a filler slot needs 0).
    """
    tokens = [int(t) for t in ots]
    while tokens and tokens[-1] == 0:
        tokens.pop()
    if not tokens:
        raise ReconstructionError("empty", "no operator tokens")

    nodes: list[TreeNode | None] = []
    children_of: list[list[int]] = []
    pos = 0
    # Slots are (parent index | None, must_be_real flag).
    level: list[tuple[int | None, bool]] = [(None, True)]
    root_index: int | None = None
    while level:
        next_level: list[tuple[int | None, bool]] = []
        for parent, must_real in level:
            token = tokens[pos] if pos < len(tokens) else 0
            pos += 1
            if token == 0:
                if must_real:
                    if pos - 1 >= len(tokens):
                        raise ReconstructionError("truncated", f"operand missing at position {pos - 1}")
                    raise ReconstructionError("slot_mismatch", f"'end' where an operand is required at position {pos - 1}")
                continue
            if not must_real:
                raise ReconstructionError("slot_mismatch", f"operator {token} in a filler slot at position {pos - 1}")
            try:
                spec = lookup(vocab, token)
            except Exception:
                raise ReconstructionError("unknown_token", f"token {token} at position {pos - 1}") from None
            index = len(nodes)
            nodes.append(TreeNode(spec.token_id, (), ()))
            children_of.append([])
            if parent is None:
                root_index = index
            else:
                children_of[parent].append(index)
            if spec.arity == 2:
                next_level.extend(((index, True), (index, True)))
            elif spec.arity == 1:
                next_level.extend(((index, True), (index, False)))
            else:
                next_level.extend(((index, False), (index, False)))
        level = next_level
    if pos < len(tokens):
        raise ReconstructionError("slot_mismatch", f"{len(tokens) - pos} tokens after the tree completed")

    assert root_index is not None
    const_values = [float(v) for v in np.asarray(consts, dtype=np.float64).ravel()]
    filled: list[TreeNode] = []
    cursor = 0
    for index, node in enumerate(nodes):
        spec = lookup(vocab, node.op_id)
        k = spec.n_constants
        if cursor + k > len(const_values):
            raise ReconstructionError(
                "constant_mismatch",
                f"tree needs more than the {len(const_values)} constants provided",
            )
        filled.append(TreeNode(node.op_id, tuple(children_of[index]), tuple(const_values[cursor:cursor + k])))
        cursor += k
    if cursor != len(const_values):
        raise ReconstructionError(
            "constant_mismatch",
            f"tree has {cursor} constant slots, got {len(const_values)}",
        )
    # Nodes were created in token order, which is exactly BFS order.
    return OpTree(nodes=tuple(filled), root=root_index)


def count_constant_slots(ots, vocab: Vocab) -> int | None:
    """Constant-slot count of the tree an OTS encodes, or None if undecodable."""
    try:
        tree = decode_structure(ots, vocab)
    except ReconstructionError:
        return None
    return int(sum(lookup(vocab, n.op_id).n_constants for n in tree.nodes))


def decode_structure(ots, vocab: Vocab) -> OpTree:
    """Decode ignoring constants (slots zero-filled to the required length)."""
    tokens = [int(t) for t in ots]
    n_consts = 0
    for t in tokens:
        if t != 0:
            try:
                n_consts += lookup(vocab, t).n_constants
            except Exception:
                raise ReconstructionError("unknown_token", f"token {t}") from None
    return decode_bfs(tokens, np.zeros(n_consts), vocab)


def is_reconstructable(ots, vocab: Vocab) -> bool:
    """Whether the token sequence decodes into a structurally valid tree."""
    try:
        decode_structure(ots, vocab)
        return True
    except ReconstructionError:
        return False


def strip_padding(ots) -> OTS:
    """Remove the trailing run of 'end'/pad zeros (internal fillers stay)."""
    tokens = [int(t) for t in ots]
    while tokens and tokens[-1] == 0:
        tokens.pop()
    return tuple(tokens)
