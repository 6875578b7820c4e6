"""The three validation metrics over prediction/target sequence sets.

All sequence distances strip the trailing run of 'end'/pad zeros first;
internal fillers stay because they carry tree structure. Negative per-pair
similarity terms are reported as-is, never clamped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTarget, ReconstructionError
from .render import render_formula
from .tree import decode_bfs, is_reconstructable, strip_padding
from .vocab import Vocab, default_vocab


@dataclass(frozen=True)
class EvalPair:
    prediction: tuple[int, ...]
    target: tuple[int, ...]
    target_constants: tuple[float, ...] = ()
    prediction_constants: tuple[float, ...] | None = None


@dataclass(frozen=True)
class EvalSet:
    pairs: tuple[EvalPair, ...]

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("an EvalSet needs at least one pair")

    def __len__(self) -> int:
        return len(self.pairs)


def levenshtein(a, b) -> int:
    """Minimum single-token insertions/deletions/substitutions from a to b."""
    a = tuple(a)
    b = tuple(b)
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, token in enumerate(a, start=1):
        current = [i]
        for j, other in enumerate(b, start=1):
            cost = 0 if token == other else 1
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost))
        previous = current
    return previous[-1]


def acc_r(omega: EvalSet, vocab: Vocab | None = None) -> float:
    """Fraction of predictions that decode into a valid operation tree."""
    vocab = vocab or default_vocab()
    hits = sum(1 for p in omega.pairs if is_reconstructable(p.prediction, vocab))
    return hits / len(omega)


def s_rl(omega: EvalSet) -> float:
    """Mean relative sequence Levenshtein similarity."""
    total = 0.0
    for pair in omega.pairs:
        t = strip_padding(pair.target)
        p = strip_padding(pair.prediction)
        if not t:
            raise DegenerateTarget("target OTS is empty after padding removal")
        total += (len(t) - levenshtein(p, t)) / len(t)
    return total / len(omega)


def formula_s_rl(omega: EvalSet, vocab: Vocab | None = None, precision: int = 4) -> float:
    """Mean relative formula-string similarity of the decoded trees.

    Unreconstructable predictions contribute 0. Predictions without supplied
    constants decode with zero-filled constant slots.
    """
    vocab = vocab or default_vocab()
    total = 0.0
    for pair in omega.pairs:
        target_tree = decode_bfs(pair.target, pair.target_constants, vocab)
        target_text = render_formula(target_tree, precision, vocab)
        if not target_text:
            raise DegenerateTarget("target renders to an empty formula")
        try:
            if pair.prediction_constants is not None:
                pred_tree = decode_bfs(pair.prediction, pair.prediction_constants, vocab)
            else:
                from .tree import decode_structure

                pred_tree = decode_structure(pair.prediction, vocab)
        except ReconstructionError:
            continue
        pred_text = render_formula(pred_tree, precision, vocab)
        total += (len(target_text) - levenshtein(pred_text, target_text)) / len(target_text)
    return total / len(omega)


def metric_report(omega: EvalSet, vocab: Vocab | None = None) -> dict:
    vocab = vocab or default_vocab()
    return {
        "acc_r": acc_r(omega, vocab),
        "s_rl": s_rl(omega),
        "formula_s_rl": formula_s_rl(omega, vocab),
        "n": len(omega),
    }
