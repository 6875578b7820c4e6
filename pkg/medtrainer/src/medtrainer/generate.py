"""Autoregressive sequence generation from a trained checkpoint."""

from __future__ import annotations

import numpy as np
import torch

from .io import PairDataset, VocabInfo, write_candidates_csv
from .model import MedModel
from .tokenizer import TokenizerConfig


def sequence_complete(tokens, vocab: VocabInfo) -> bool:
    """Whether tokens form a full breadth-first encoding, trailing filler
    level included (the shape training sequences end with)."""
    tokens = list(tokens)
    if not tokens or tokens[0] == 0:
        return False
    pos = 0
    # slots are (must_be_real,) flags per level
    level = [True]
    saw_node_beyond_root = False
    while level:
        next_level = []
        for must_real in level:
            if pos >= len(tokens):
                return False
            token = tokens[pos]
            pos += 1
            if token == 0:
                if must_real:
                    return False
                continue
            if not must_real:
                return False
            arity = _arity_of(token, vocab)
            if arity is None:
                return False
            if pos > 1:
                saw_node_beyond_root = True
            if arity == 2:
                next_level.extend((True, True))
            elif arity == 1:
                next_level.extend((True, False))
            else:
                next_level.extend((False, False))
        if next_level and all(not flag for flag in next_level):
            # the trailing all-filler level: complete once it is emitted
            needed = len(next_level)
            if not saw_node_beyond_root:
                return pos == len(tokens)  # single-leaf encodings stop at the leaf
            return pos + needed == len(tokens) and all(
                t == 0 for t in tokens[pos:pos + needed]
            )
        level = next_level
    return pos == len(tokens)


def _arity_of(token: int, vocab: VocabInfo):
    return vocab.arities.get(int(token))


@torch.no_grad()
def generate_ots(
    model: MedModel,
    tok_cfg: TokenizerConfig,
    vocab: VocabInfo,
    image: np.ndarray,
    k: int = 1,
    mode: str = "greedy",
    temperature: float = 1.0,
    seed: int = 0,
) -> list[tuple[int, ...]]:
    """Decode k candidate sequences for one image.

    Greedy decoding is deterministic; sampled variants draw from the softmax
    at the given temperature. Decoding stops when the sequence forms a
    complete tree encoding or hits capacity.
    """
    model.eval()
    images = torch.from_numpy(np.asarray(image, dtype=np.float32))[None]
    img_hidden = model.encode_image(images)
    generator = torch.Generator().manual_seed(seed)
    allowed = torch.zeros(model.cfg.vocab_size, dtype=torch.bool)
    allowed[vocab.end_id] = True
    for op_id in vocab.names:
        allowed[op_id] = True

    candidates = []
    for index in range(k):
        greedy = mode == "greedy" and index == 0
        tokens = [tok_cfg.bos_id]
        while len(tokens) < tok_cfg.d_s:
            padded = torch.full((1, tok_cfg.d_s), tok_cfg.pad_id, dtype=torch.long)
            padded[0, : len(tokens)] = torch.tensor(tokens)
            mask = torch.zeros(1, tok_cfg.d_s, dtype=torch.bool)
            mask[0, : len(tokens)] = True
            consts = torch.zeros(1, tok_cfg.d_c)
            const_mask = torch.zeros(1, tok_cfg.d_c, dtype=torch.bool)
            padding = model.combined_padding(mask, const_mask)
            logits = model.decode_ots(padded, consts, padding, img_hidden)
            step_logits = logits[0, len(tokens) - 1].masked_fill(~allowed, -torch.inf)
            if greedy:
                token = int(step_logits.argmax().item())
            else:
                probs = torch.softmax(step_logits / max(temperature, 1e-6), dim=-1)
                token = int(torch.multinomial(probs, 1, generator=generator).item())
            tokens.append(token)
            if sequence_complete(tokens[1:], vocab):
                break
        candidates.append(tuple(tokens[1:]))
    return candidates


def generate_candidates_csv(model, tok_cfg, vocab, dataset: PairDataset, pair_ids,
                            out_path, k: int = 1, mode: str = "greedy", seed: int = 0):
    rows = []
    for pair_id in pair_ids:
        data, _mask = dataset.image(pair_id)
        for rank, ots in enumerate(
            generate_ots(model, tok_cfg, vocab, data, k=k, mode=mode, seed=seed + pair_id),
            start=1,
        ):
            rows.append((pair_id, rank, ots))
    write_candidates_csv(out_path, rows)
    return rows
