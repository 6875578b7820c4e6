"""Neural-free end-to-end symbolic regression over a target function image.

Candidates come from exhaustive enumeration, a token-list file, or a model
output CSV; each candidate's constants are fitted to the target and the
survivors are ranked by fitted MSE, ties broken toward shorter sequences.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import NoCandidates, NoFinitePoints, ReconstructionError
from .fitting import FitConfig, FitResult, fit
from .funcimg import FuncImg
from .render import render_formula
from .tree import OpTree, TreeNode, decode_structure, encode_bfs, strip_padding
from .vocab import Vocab, default_vocab, lookup

DEFAULT_ENUMERATION_LIMIT = 50_000
MAX_EXHAUSTIVE_NODE_BUDGET = 7


@dataclass(frozen=True)
class CandidateSource:
    kind: str  # "enumerate" | "file" | "model"
    budget: int = DEFAULT_ENUMERATION_LIMIT
    node_budget: int = 5
    n_vars: int = 1
    path: str | None = None
    pair_id: int | None = None  # model CSVs may carry candidates for many targets

    def __post_init__(self):
        if self.kind not in ("enumerate", "file", "model"):
            raise ValueError(f"unknown candidate source kind {self.kind!r}")
        if self.budget < 1:
            raise ValueError("budget must be at least 1")


@dataclass(frozen=True)
class Solution:
    rank: int
    ots: tuple[int, ...]
    fit: FitResult
    formula: str


@dataclass
class SolveDiagnostics:
    n_candidates: int = 0
    n_failed_reconstruction: int = 0
    n_failed_fit: int = 0
    prescreen_kept: int = 0


def enumerate_candidates(node_budget: int, vocab: Vocab | None = None,
                         limit: int = DEFAULT_ENUMERATION_LIMIT, n_vars: int = 1):
    """All constraint-satisfying trees of at most node_budget nodes, as OTS.

    Deterministic order: ascending node count, then lexicographic tokens.
    The same adjacency/frequency rules as the random generator apply; the
    variable-presence rule does not (constant-only candidates are culled by
    rationality at fit time instead).
    """
    if node_budget < 1:
        raise ValueError("node_budget must be at least 1")
    if node_budget > MAX_EXHAUSTIVE_NODE_BUDGET:
        raise ValueError(
            f"exhaustive enumeration is capped at {MAX_EXHAUSTIVE_NODE_BUDGET} nodes; "
            "use a file or model source for larger budgets"
        )
    vocab = vocab or default_vocab()
    leaf_specs = list(vocab.variables(n_vars)) + [lookup(vocab, "C")]
    unary = vocab.by_arity(1)
    binary = vocab.by_arity(2)
    emitted = 0
    ctx = _EnumContext(leaf_specs, unary, binary, lookup(vocab, "C"), max_chain=3)
    for size in range(1, node_budget + 1):
        batch = []
        for shape in _subtrees(ctx, size, parent=None, chain=0, same_run=0, counts={}):
            tree = _materialize(shape, vocab)
            ots, _ = encode_bfs(tree, vocab)
            batch.append(ots)
        for ots in sorted(batch):
            yield ots
            emitted += 1
            if emitted >= limit:
                return


@dataclass(frozen=True)
class _EnumContext:
    leaf_specs: list
    unary: tuple
    binary: tuple
    c_spec: object
    max_chain: int


def _subtrees(ctx: _EnumContext, size, parent, chain, same_run, counts):
    """Yield nested (spec, children...) shapes of exactly ``size`` nodes.

    ``chain`` counts consecutive unary ancestors, ``same_run`` the trailing
    run of the parent's own operator, ``counts`` per-operator totals over the
    already-fixed part of the tree (ancestors plus finished left siblings).
    """

    def allowed(spec):
        if parent is not None:
            if spec.name in parent.forbidden_adjacent or parent.name in spec.forbidden_adjacent:
                return False
        if spec.max_count is not None and counts.get(spec.name, 0) >= spec.max_count:
            return False
        if spec.arity == 1:
            if chain >= ctx.max_chain:
                return False
            if (
                spec.max_consecutive is not None
                and parent is not None
                and parent.name == spec.name
                and same_run >= spec.max_consecutive
            ):
                return False
        return True

    if size == 1:
        for spec in ctx.leaf_specs:
            if allowed(spec):
                yield (spec,)
        return
    for spec in ctx.unary:
        if not allowed(spec):
            continue
        sub_counts = dict(counts)
        sub_counts[spec.name] = sub_counts.get(spec.name, 0) + 1
        run = same_run + 1 if (parent is not None and parent.name == spec.name) else 1
        for child in _subtrees(ctx, size - 1, spec, chain + 1, run, sub_counts):
            yield (spec, child)
    if size >= 3:
        for spec in ctx.binary:
            if not allowed(spec):
                continue
            sub_counts = dict(counts)
            sub_counts[spec.name] = sub_counts.get(spec.name, 0) + 1
            if spec.name == "pow":
                # exponent child is the constant leaf
                for left in _subtrees(ctx, size - 2, spec, 0, 0, sub_counts):
                    yield (spec, left, (ctx.c_spec,))
                continue
            for left_size in range(1, size - 1):
                for left in _subtrees(ctx, left_size, spec, 0, 0, sub_counts):
                    merged = _merge_counts(sub_counts, left)
                    for right in _subtrees(ctx, size - 1 - left_size, spec, 0, 0, merged):
                        yield (spec, left, right)


def _merge_counts(counts, shape):
    merged = dict(counts)

    def walk(s):
        spec = s[0]
        merged[spec.name] = merged.get(spec.name, 0) + 1
        for child in s[1:]:
            walk(child)

    walk(shape)
    return merged


def _materialize(shape, vocab) -> OpTree:
    nodes: list[TreeNode] = []

    def walk(s) -> int:
        spec = s[0]
        children = tuple(walk(c) for c in s[1:])
        nodes.append(TreeNode(spec.token_id, children, (0.0,) * spec.n_constants))
        return len(nodes) - 1

    root = walk(shape)
    return OpTree(nodes=tuple(nodes), root=root)


def load_candidates_file(path) -> list[tuple[int, ...]]:
    """One OTS per line, comma-separated integers; blank lines and # comments skipped."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        out.append(tuple(int(t) for t in line.replace(",", " ").split()))
    return out


def load_model_candidates(path, pair_id: int | None = None) -> list[tuple[int, ...]]:
    """Read the model-source CSV (pair_id, rank, ots), optionally one target's rows."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if pair_id is not None and int(row["pair_id"]) != pair_id:
                continue
            rows.append((int(row["pair_id"]), int(row["rank"]), row["ots"]))
    rows.sort(key=lambda r: (r[0], r[1]))
    return [tuple(int(t) for t in ots.split(",")) for _, _, ots in rows]


def candidates_from_source(source: CandidateSource, vocab: Vocab | None = None):
    vocab = vocab or default_vocab()
    if source.kind == "enumerate":
        yield from enumerate_candidates(source.node_budget, vocab, source.budget, source.n_vars)
        return
    if source.kind == "file":
        items = load_candidates_file(source.path)
    else:
        items = load_model_candidates(source.path, source.pair_id)
    yield from items[: source.budget]


def solve(
    target: FuncImg,
    source: CandidateSource,
    k: int = 5,
    fit_cfg: FitConfig | None = None,
    vocab: Vocab | None = None,
    prescreen: int = 0,
) -> tuple[list[Solution], SolveDiagnostics]:
    """Fit every candidate to the target and rank the survivors by MSE.

    With ``prescreen`` > 0, every candidate first gets a cheap fit (one
    restart, few iterations) and only the best ``prescreen`` are refit at
    the full budget; the rest are ranked by their cheap result. This keeps
    exhaustive budgets tractable without dropping any candidate.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    vocab = vocab or default_vocab()
    fit_cfg = fit_cfg or FitConfig()
    diagnostics = SolveDiagnostics()

    coarse_cfg = fit_cfg
    if prescreen > 0:
        coarse_cfg = replace(
            fit_cfg,
            restarts=1,
            max_iters=min(fit_cfg.max_iters, 8),
            init_probes=min(fit_cfg.init_probes, 16),
        )

    scored: list[tuple[tuple[int, ...], FitResult]] = []
    for ots in candidates_from_source(source, vocab):
        diagnostics.n_candidates += 1
        try:
            result = fit(ots, target, coarse_cfg, vocab)
        except ReconstructionError:
            diagnostics.n_failed_reconstruction += 1
            continue
        except NoFinitePoints:
            diagnostics.n_failed_fit += 1
            continue
        scored.append((ots, result))
    if not scored:
        raise NoCandidates("no candidate survived reconstruction and fitting")

    scored.sort(key=_rank_key)
    if prescreen > 0:
        keep = min(prescreen, len(scored))
        diagnostics.prescreen_kept = keep
        refined: list[tuple[tuple[int, ...], FitResult]] = []
        for ots, coarse in scored[:keep]:
            try:
                refined.append((ots, fit(ots, target, fit_cfg, vocab)))
            except NoFinitePoints:
                diagnostics.n_failed_fit += 1
        refined.sort(key=_rank_key)
        scored = refined + scored[keep:]
        # a refined result can only improve, so the global order still holds
        scored.sort(key=_rank_key)

    solutions = []
    for rank, (ots, result) in enumerate(scored[:k], start=1):
        tree = decode_structure(ots, vocab).with_constants(result.constants)
        solutions.append(Solution(
            rank=rank,
            ots=ots,
            fit=result,
            formula=render_formula(tree, vocab=vocab),
        ))
    return solutions, diagnostics


def _rank_key(item):
    ots, result = item
    stripped = strip_padding(ots)
    return (result.final_mse, len(stripped), stripped)
