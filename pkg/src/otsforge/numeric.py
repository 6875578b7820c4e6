"""Forward evaluation and reverse-mode constant gradients for operation trees.

Domain violations never abort a batch: they surface as NaN (or ±inf for
poles/overflow) at the offending points and are masked downstream. Repeated
evaluation of one tree at varying constants (the fitting hot path) goes
through TreeProgram, which resolves symbols and slot layout once.
"""

from __future__ import annotations

import numpy as np

from .errors import NoFinitePoints
from .tree import OpTree
from .vocab import Vocab, default_vocab, lookup


def _safe_log(x):
    with np.errstate(all="ignore"):
        return np.log(np.where(x > 0, x, np.nan))


_FORWARD = {
    "add": lambda c, a: a[0] + a[1],
    "sub": lambda c, a: a[0] - a[1],
    "mul": lambda c, a: a[0] * a[1],
    "div": lambda c, a: a[0] / a[1],
    "pow": lambda c, a: np.power(a[0], a[1]),
    "neg": lambda c, a: -a[0],
    "inv": lambda c, a: 1.0 / a[0],
    "sin": lambda c, a: np.sin(a[0]),
    "cos": lambda c, a: np.cos(a[0]),
    "tan": lambda c, a: np.tan(a[0]),
    "exp": lambda c, a: np.exp(a[0]),
    "log": lambda c, a: _safe_log(a[0]),
    "sqrt": lambda c, a: np.sqrt(a[0]),
    "abs": lambda c, a: np.abs(a[0]),
    "L": lambda c, a: c[0] * a[0] + c[1],
}

# partials w.r.t. each argument, given (constants, args, value)
_BACKWARD = {
    "add": lambda c, a, v: (None, None),  # None means "pass the adjoint through"
    "sub": lambda c, a, v: (None, -1.0),
    "mul": lambda c, a, v: (a[1], a[0]),
    "div": lambda c, a, v: (1.0 / a[1], -a[0] / (a[1] * a[1])),
    "pow": lambda c, a, v: (a[1] * np.power(a[0], a[1] - 1.0), v * _safe_log(a[0])),
    "neg": lambda c, a, v: (-1.0,),
    "inv": lambda c, a, v: (-1.0 / (a[0] * a[0]),),
    "sin": lambda c, a, v: (np.cos(a[0]),),
    "cos": lambda c, a, v: (-np.sin(a[0]),),
    "tan": lambda c, a, v: (1.0 / np.square(np.cos(a[0])),),
    "exp": lambda c, a, v: (v,),
    "log": lambda c, a, v: (1.0 / a[0],),
    "sqrt": lambda c, a, v: (0.5 / v,),
    "abs": lambda c, a, v: (np.sign(a[0]),),
    "L": lambda c, a, v: (c[0],),
}


class TreeProgram:
    """A tree compiled to flat arrays for repeated evaluation.

    Nodes are stored in BFS order (parents first), the order that also
    defines the constants-array layout.
    """

    def __init__(self, tree: OpTree, vocab: Vocab | None = None):
        vocab = vocab or default_vocab()
        order = tree.bfs_order
        position = {node: i for i, node in enumerate(order)}
        self.names: list[str] = []
        self.children: list[tuple[int, ...]] = []
        self.var_index: list[int | None] = []
        self.slot_start: list[int] = []
        self.slot_count: list[int] = []
        self.fixed_constants: list[tuple[float, ...]] = []
        slots = 0
        for node_index in order:
            node = tree.nodes[node_index]
            spec = lookup(vocab, node.op_id)
            self.names.append(spec.name)
            self.children.append(tuple(position[c] for c in node.children))
            self.var_index.append(int(spec.name[1:]) if spec.name.startswith("x") else None)
            self.slot_start.append(slots)
            self.slot_count.append(spec.n_constants)
            self.fixed_constants.append(node.constants)
            slots += spec.n_constants
        self.n_slots = slots
        self.n_nodes = len(order)
        self.max_var = max((v for v in self.var_index if v is not None), default=-1)

    def constants_of(self, theta) -> list[tuple]:
        if theta is None:
            return self.fixed_constants
        out = []
        for start, count in zip(self.slot_start, self.slot_count):
            out.append(tuple(theta[start:start + count]) if count else ())
        return out

    def forward(self, points: np.ndarray, theta=None) -> list[np.ndarray]:
        """Value array per node (BFS index); root is index 0."""
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            points = points[:, None]
        if self.max_var >= points.shape[1]:
            raise ValueError(
                f"tree uses x{self.max_var} but points have {points.shape[1]} columns"
            )
        m = points.shape[0]
        consts = self.constants_of(theta)
        values: list[np.ndarray | None] = [None] * self.n_nodes
        with np.errstate(all="ignore"):
            for i in range(self.n_nodes - 1, -1, -1):
                name = self.names[i]
                var = self.var_index[i]
                if var is not None:
                    values[i] = points[:, var]
                elif name == "C":
                    values[i] = np.full(m, consts[i][0])
                else:
                    args = [values[c] for c in self.children[i]]
                    values[i] = _FORWARD[name](consts[i], args)
        return values  # type: ignore[return-value]

    def backward(self, values: list[np.ndarray], root_adjoint: np.ndarray, theta=None) -> np.ndarray:
        """Gradient of (output . adjoint) w.r.t. the constants array."""
        consts = self.constants_of(theta)
        grad = np.zeros(self.n_slots)
        adjoint: list[np.ndarray | None] = [None] * self.n_nodes
        adjoint[0] = root_adjoint
        with np.errstate(all="ignore"):
            for i in range(self.n_nodes):
                adj = adjoint[i]
                name = self.names[i]
                start, count = self.slot_start[i], self.slot_count[i]
                if name == "C":
                    grad[start] = np.sum(adj)
                    continue
                if self.var_index[i] is not None:
                    continue
                args = [values[c] for c in self.children[i]]
                if name == "L":
                    grad[start] = np.sum(adj * args[0])
                    grad[start + 1] = np.sum(adj)
                partials = _BACKWARD[name](consts[i], args, values[i])
                for child, partial in zip(self.children[i], partials):
                    adjoint[child] = adj if partial is None else adj * partial
        return grad


def forward_all(tree: OpTree, points: np.ndarray, vocab: Vocab | None = None) -> list[np.ndarray]:
    """Evaluate every node on ``points``; list indexed like tree.nodes."""
    program = TreeProgram(tree, vocab)
    values = program.forward(points)
    by_node: list[np.ndarray | None] = [None] * len(tree.nodes)
    for bfs_pos, node_index in enumerate(tree.bfs_order):
        by_node[node_index] = values[bfs_pos]
    return by_node  # type: ignore[return-value]


def evaluate(tree: OpTree, points: np.ndarray, vocab: Vocab | None = None) -> np.ndarray:
    """Pointwise forward evaluation; NaN/inf encode domain violations."""
    return TreeProgram(tree, vocab).forward(points)[0].copy()


def grad_constants(
    tree: OpTree,
    points: np.ndarray,
    targets: np.ndarray,
    vocab: Vocab | None = None,
) -> tuple[float, np.ndarray]:
    """MSE loss against ``targets`` and its gradient w.r.t. the constants array.

    Points whose forward value or target is non-finite are dropped from the
    mean and contribute zero gradient. Raises NoFinitePoints if nothing
    survives.
    """
    program = TreeProgram(tree, vocab)
    targets = np.asarray(targets, dtype=np.float64).ravel()
    values = program.forward(points)
    pred = values[0]
    if pred.shape != targets.shape:
        raise ValueError(f"targets shape {targets.shape} != predictions shape {pred.shape}")
    valid = np.isfinite(pred) & np.isfinite(targets)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise NoFinitePoints("every evaluation point is non-finite")
    # Restricting the reverse sweep to valid points avoids 0 * inf
    # contamination from excluded points.
    sub_values = [v[valid] for v in values]
    residual = sub_values[0] - targets[valid]
    loss = float(np.mean(residual * residual))
    seed = 2.0 * residual / n_valid
    grad = program.backward(sub_values, seed)
    return loss, grad
