"""Padding tokenizer for operation-tree sequences and their constants."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .io import VocabInfo


@dataclass(frozen=True)
class TokenizerConfig:
    d_s: int  # max token sequence length, including the leading special token
    d_c: int  # max constants length
    cls_id: int
    bos_id: int
    pad_id: int = 0

    @classmethod
    def for_dataset(cls, vocab: VocabInfo, max_ots: int, max_consts: int) -> "TokenizerConfig":
        return cls(
            d_s=max_ots + 2,
            d_c=max(max_consts, 1),
            cls_id=vocab.special_id("[CLS]"),
            bos_id=vocab.special_id("[BOS]"),
        )


def tokenize(ots, consts, cfg: TokenizerConfig, mode: str = "encode"):
    """Pad and specialize one sequence.

    Returns (tokens, constants, token_mask, const_mask); the leading token is
    [CLS] for encoder input and [BOS] for decoder input. Raises OverflowError
    when the inputs exceed capacity.
    """
    ots = [int(t) for t in ots]
    consts = [float(v) for v in consts]
    if len(ots) > cfg.d_s - 2:
        raise OverflowError(f"OTS length {len(ots)} exceeds capacity {cfg.d_s - 2}")
    if len(consts) > cfg.d_c:
        raise OverflowError(f"constants length {len(consts)} exceeds capacity {cfg.d_c}")
    lead = cfg.cls_id if mode == "encode" else cfg.bos_id
    tokens = torch.full((cfg.d_s,), cfg.pad_id, dtype=torch.long)
    tokens[0] = lead
    tokens[1:1 + len(ots)] = torch.tensor(ots, dtype=torch.long)
    token_mask = torch.zeros(cfg.d_s, dtype=torch.bool)
    token_mask[:1 + len(ots)] = True
    constants = torch.zeros(cfg.d_c, dtype=torch.float32)
    if consts:
        constants[:len(consts)] = torch.tensor(consts, dtype=torch.float32)
    const_mask = torch.zeros(cfg.d_c, dtype=torch.bool)
    const_mask[:len(consts)] = True
    return tokens, constants, token_mask, const_mask


def detokenize(tokens, token_mask, cfg: TokenizerConfig):
    """Recover the raw OTS span (drops the leading special and the padding)."""
    length = int(token_mask.sum().item())
    return tuple(int(t) for t in tokens[1:length])


def tokenize_batch(rows, cfg: TokenizerConfig, mode: str = "encode"):
    parts = [tokenize(ots, consts, cfg, mode) for ots, consts in rows]
    return tuple(torch.stack([p[i] for p in parts]) for i in range(4))
